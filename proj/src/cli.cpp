#include "mrseg/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <set>

#include "mrseg/checkpoint.hpp"
#include "mrseg/errors.hpp"
#include "mrseg/eval.hpp"
#include "mrseg/nifti.hpp"
#include "mrseg/phantom.hpp"
#include "mrseg/preprocess.hpp"
#include "mrseg/train.hpp"

namespace mrseg::cli {

namespace fs = std::filesystem;

int exit_code(const std::exception& e) {
  if (const auto* me = dynamic_cast<const Error*>(&e)) {
    switch (me->category()) {
      case ErrorCategory::Config: return 2;
      case ErrorCategory::Io: return 3;
      case ErrorCategory::Numerics: return 4;
      default: return 1;
    }
  }
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return 3;
  return 1;
}

namespace {

void ensure_dir(const fs::path& d) {
  std::error_code ec;
  fs::create_directories(d, ec);
  if (ec) throw IoError("cannot create " + d.string() + ": " + ec.message());
}

void require_file(const fs::path& p) {
  if (!fs::exists(p)) throw MissingCase("input " + p.string() + " does not exist");
}

void copy_manifest(const fs::path& from, const fs::path& to) {
  std::error_code ec;
  fs::copy_file(from, to, fs::copy_options::overwrite_existing, ec);
  if (ec) throw IoError("cannot copy manifest: " + ec.message());
}

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  int workers = 0;
};

PipelineConfig resolve(const Common& c) {
  PipelineConfig cfg;
  if (!c.config_path.empty()) {
    require_file(c.config_path);
    cfg = load_config(c.config_path);
  }
  for (const auto& o : c.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(' '));
      s.erase(s.find_last_not_of(' ') + 1);
      return s;
    };
    set_config_value(cfg, trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
  if (c.workers > 0) cfg.workers = c.workers;
  cfg.validate();
  return cfg;
}

void echo(const PipelineConfig& cfg, std::ostream& err, const fs::path& out_dir = {}) {
  const std::string text = resolved_echo(cfg);
  err << "# resolved configuration (hash " << config_hash(cfg) << ")\n" << text;
  if (!out_dir.empty()) {
    ensure_dir(out_dir);
    std::ofstream(out_dir / "resolved.cfg") << text;
  }
}

CaseData load_case(const fs::path& dir, const std::string& id, bool need_labels) {
  CaseData c;
  c.id = id;
  const fs::path fct = dir / "fine" / "ct" / (id + ".nii");
  require_file(fct);
  c.high_ct = nifti::read(fct, VolumeKind::Intensity);
  const fs::path fl = dir / "fine" / "labels" / (id + ".nii");
  if (fs::exists(fl)) c.high_labels = nifti::read(fl, VolumeKind::Labels);
  else if (need_labels) throw MissingCase("labels for " + id + " not found");
  const fs::path cct = dir / "coarse" / "ct" / (id + ".nii");
  if (fs::exists(cct)) c.low_ct = nifti::read(cct, VolumeKind::Intensity);
  const fs::path cl = dir / "coarse" / "labels" / (id + ".nii");
  if (fs::exists(cl)) c.low_labels = nifti::read(cl, VolumeKind::Labels);
  return c;
}

std::string maps_name(const std::string& id, const std::string& level, int c) {
  return id + "." + level + ".c" + std::to_string(c) + ".nii";
}

std::vector<CaseData> cases_from_raw(const fs::path& dir, const std::string& split, const PipelineConfig& cfg) {
  std::vector<CaseData> out;
  for (const auto& e : read_manifest(dir / "manifest.csv")) {
    if (split != "all" && e.split != split) continue;
    const fs::path ct = dir / "ct" / (e.id + ".nii"), lab = dir / "labels" / (e.id + ".nii");
    require_file(ct);
    require_file(lab);
    out.push_back(prepare_case(e.id, nifti::read(ct, VolumeKind::Intensity), nifti::read(lab, VolumeKind::Labels),
                               cfg.fine_spacing, cfg.multires ? cfg.ratio : 1, cfg.clip_lo, cfg.clip_hi));
  }
  return out;
}

void print_run(const PresetRun& r, std::ostream& out) {
  out << r.name << ": val merged dice " << r.val_merged_dice << ", parenchyma " << r.val_class_dice[0]
      << ", abnormality " << r.val_class_dice[1] << ", best epoch " << r.train.best_epoch << " of "
      << r.train.history.size() << ", " << r.train.steps << " steps, " << r.seconds << " s\n";
}

}  // namespace

std::vector<CaseData> load_prepared(const fs::path& dir, const std::string& split, bool need_labels) {
  std::vector<CaseData> out;
  for (const auto& e : read_manifest(dir / "manifest.csv")) {
    if (split == "all" || e.split == split) out.push_back(load_case(dir, e.id, need_labels));
  }
  return out;
}

void write_maps(const ProbabilityMaps& maps, const fs::path& dir, const std::string& id, const std::string& level) {
  ensure_dir(dir);
  for (int c = 0; c < maps.class_count(); ++c) nifti::write(maps[c], dir / maps_name(id, level, c));
}

ProbabilityMaps read_maps(const fs::path& dir, const std::string& id, const std::string& level) {
  ProbabilityMaps m;
  for (int c = 0;; ++c) {
    const fs::path p = dir / maps_name(id, level, c);
    if (!fs::exists(p)) break;
    m.classes.push_back(nifti::read(p, VolumeKind::Probability));
  }
  return m;
}

std::vector<std::string> map_ids(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw MissingCase("directory " + dir.string() + " does not exist");
  std::set<std::string> ids;
  const std::string tag = ".high.c0.nii";
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() > tag.size() && name.compare(name.size() - tag.size(), tag.size(), tag) == 0) {
      ids.insert(name.substr(0, name.size() - tag.size()));
    }
  }
  return {ids.begin(), ids.end()};
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cascaded 3-D U-Net kidney and abnormality segmentation"};
  app.require_subcommand(1);
  Common common;
  app.add_option("-c,--config", common.config_path, "key = value configuration file");
  app.add_option("-s,--set", common.overrides, "override, key=value (repeatable)");
  app.add_option("-j,--workers", common.workers, "worker threads");

  std::string out_path, data_dir, init_ckpt, checkpoint, split = "test", a_dir, b_dir, pred_dir, ref_dir, csv_path,
                                                           preset, diff_preset, history;
  int count = 0;
  long long seed = -1;
  bool run_preset = false;

  auto* phantom = app.add_subcommand("phantom", "generate a synthetic cohort");
  phantom->add_option("-o,--out", out_path, "cohort directory")->required();
  phantom->add_option("-n,--count", count, "number of cases");
  phantom->add_option("--seed", seed, "cohort seed");

  auto* prep = app.add_subcommand("preprocess", "resample and clip a cohort onto the fine and coarse grids");
  prep->add_option("-d,--data", data_dir, "raw cohort (manifest.csv, ct/, labels/)")->required();
  prep->add_option("-o,--out", out_path, "prepared directory")->required();

  auto* pre = app.add_subcommand("pretrain-lowres", "fit the coarse localisation net");
  pre->add_option("-d,--data", data_dir, "prepared directory")->required();
  pre->add_option("-o,--out", out_path, "checkpoint to write")->required();
  pre->add_option("--history", history, "history CSV");

  auto* train = app.add_subcommand("train", "fit the cascade");
  train->add_option("-d,--data", data_dir, "prepared directory")->required();
  train->add_option("-o,--out", out_path, "checkpoint to write")->required();
  train->add_option("--init", init_ckpt, "checkpoint to start from (e.g. a pretrained coarse net)");
  train->add_option("--history", history, "history CSV");

  auto* infer = app.add_subcommand("infer", "tiled prediction of probability maps");
  infer->add_option("-m,--checkpoint", checkpoint, "trained checkpoint")->required();
  infer->add_option("-d,--data", data_dir, "prepared directory")->required();
  infer->add_option("-o,--out", out_path, "probability map directory")->required();
  infer->add_option("--split", split, "train, val, test or all");

  auto* ens = app.add_subcommand("ensemble", "average two sets of probability maps");
  ens->add_option("-a", a_dir, "first map directory")->required();
  ens->add_option("-b", b_dir, "second map directory")->required();
  ens->add_option("-o,--out", out_path, "output map directory")->required();

  auto* post = app.add_subcommand("postprocess", "gate, argmax and remove detached abnormalities");
  post->add_option("-p,--probs", a_dir, "probability map directory")->required();
  post->add_option("-o,--out", out_path, "label directory")->required();

  auto* ev = app.add_subcommand("eval", "Dice report of predicted against reference labels");
  ev->add_option("-p,--pred", pred_dir, "predicted label directory")->required();
  ev->add_option("-r,--ref", ref_dir, "reference label directory")->required();
  ev->add_option("--csv", csv_path, "per-case CSV");

  auto* abl = app.add_subcommand("ablate", "ablation presets E5 to E1");
  abl->add_option("-p,--preset", preset, "E5, E4, E3, E2 or E1, or 'all'")->required();
  abl->add_option("--diff", diff_preset, "print the keys that differ from this preset");
  abl->add_flag("--run", run_preset, "train and validate the preset");
  abl->add_option("-d,--data", data_dir, "raw cohort for --run");
  abl->add_option("-o,--out", out_path, "output directory for --run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    PipelineConfig cfg = resolve(common);
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);

    if (*phantom) {
      if (count > 0) cfg.phantom_count = count;
      cfg.validate();
      echo(cfg, err, out_path);
      CohortConfig cc;
      const int n = cfg.phantom_size;
      cc.dims = {n, n, n};
      cc.spacing = {cfg.phantom_spacing, cfg.phantom_spacing, cfg.phantom_spacing};
      cc.abnormality_fraction = cfg.phantom_abnormality_fraction;
      cc.test_fraction = cfg.phantom_test_fraction;
      const auto cohort = make_cohort(cfg.phantom_count, cfg.seed, cc);
      write_cohort(cohort, out_path);
      out << "wrote " << cohort.size() << " cases to " << out_path << "\n";
      return 0;
    }
    if (*prep) {
      echo(cfg, err, out_path);
      for (const char* sub : {"fine/ct", "fine/labels", "coarse/ct", "coarse/labels"}) ensure_dir(fs::path(out_path) / sub);
      const auto manifest = read_manifest(fs::path(data_dir) / "manifest.csv");
      for (const auto& e : manifest) {
        const fs::path ct = fs::path(data_dir) / "ct" / (e.id + ".nii");
        const fs::path lab = fs::path(data_dir) / "labels" / (e.id + ".nii");
        require_file(ct);
        const Volume v = nifti::read(ct, VolumeKind::Intensity);
        const Vec3 fine{cfg.fine_spacing, cfg.fine_spacing, cfg.fine_spacing};
        const Vec3 coarse{fine[0] * cfg.ratio, fine[1] * cfg.ratio, fine[2] * cfg.ratio};
        nifti::write(clip_hu(resample(v, fine, Interp::Cubic), cfg.clip_lo, cfg.clip_hi),
                     fs::path(out_path) / "fine" / "ct" / (e.id + ".nii"));
        nifti::write(clip_hu(resample(v, coarse, Interp::Cubic), cfg.clip_lo, cfg.clip_hi),
                     fs::path(out_path) / "coarse" / "ct" / (e.id + ".nii"));
        if (fs::exists(lab)) {
          const Volume l = nifti::read(lab, VolumeKind::Labels);
          nifti::write(resample(l, fine, Interp::Nearest), fs::path(out_path) / "fine" / "labels" / (e.id + ".nii"));
          nifti::write(resample(l, coarse, Interp::Nearest), fs::path(out_path) / "coarse" / "labels" / (e.id + ".nii"));
        }
      }
      copy_manifest(fs::path(data_dir) / "manifest.csv", fs::path(out_path) / "manifest.csv");
      out << "prepared " << manifest.size() << " cases in " << out_path << "\n";
      return 0;
    }
    if (*pre || *train) {
      echo(cfg, err, fs::path(out_path).parent_path());
      const auto tr = load_prepared(data_dir, "train");
      const auto va = load_prepared(data_dir, "val");
      Rng rng(cfg.seed);
      CascadeModel model(cascade_config(cfg), rng);
      if (!init_ckpt.empty()) {
        require_file(init_ckpt);
        load_checkpoint(model, init_ckpt);
      }
      TrainConfig tc = *pre ? pretrain_config(cfg) : train_config(cfg);
      tc.log = &out;
      tc.history_csv = history;
      tc.checkpoint = out_path;
      const TrainResult r = *pre ? pretrain_lowres(model, tr, va, tc) : train_cascade(model, tr, va, tc);
      save_checkpoint(model, out_path, config_hash(cfg),
                      {{"best_epoch", r.best_epoch}, {"best_val_mean_dice", r.best_score}, {"steps", r.steps}});
      out << "best epoch " << r.best_epoch << " mean val dice " << r.best_score << "\n";
      return 0;
    }
    if (*infer) {
      echo(cfg, err, out_path);
      require_file(checkpoint);
      const auto header = read_checkpoint_header(checkpoint);
      Rng rng(0);
      CascadeModel model(header.architecture, rng);
      load_checkpoint(model, checkpoint);
      const auto cases = load_prepared(data_dir, split, false);
      for (const auto& c : cases) {
        const auto pred = predict_volume(model, c.high_ct, model.multires() ? &c.low_ct : nullptr, {cfg.workers});
        write_maps(pred.high, out_path, c.id, "high");
        if (model.multires()) write_maps(pred.low, out_path, c.id, "low");
      }
      out << "predicted " << cases.size() << " cases into " << out_path << "\n";
      return 0;
    }
    if (*ens) {
      echo(cfg, err, out_path);
      const auto ids = map_ids(a_dir);
      for (const auto& id : ids) {
        for (const char* level : {"high", "low"}) {
          const auto ma = read_maps(a_dir, id, level);
          if (ma.classes.empty()) continue;
          const auto mb = read_maps(b_dir, id, level);
          if (mb.classes.empty()) throw MissingCase("no " + std::string(level) + " maps for " + id + " in " + b_dir);
          write_maps(ensemble(ma, mb), out_path, id, level);
        }
      }
      out << "ensembled " << ids.size() << " cases into " << out_path << "\n";
      return 0;
    }
    if (*post) {
      echo(cfg, err, out_path);
      ensure_dir(fs::path(out_path) / "format1");
      const auto ids = map_ids(a_dir);
      for (const auto& id : ids) {
        const auto high = read_maps(a_dir, id, "high");
        const auto low = read_maps(a_dir, id, "low");
        const auto seg = postprocess(high, low.classes.empty() ? nullptr : &low, cfg.ratio, cfg.post);
        nifti::write(seg.labels, fs::path(out_path) / (id + ".nii"));
        nifti::write(seg.format1, fs::path(out_path) / "format1" / (id + ".nii"));
      }
      out << "post-processed " << ids.size() << " cases into " << out_path << "\n";
      return 0;
    }
    if (*ev) {
      echo(cfg, err);
      const auto report = evaluate_cohort(pred_dir, ref_dir, cfg.eval);
      if (!csv_path.empty()) {
        std::ofstream os(csv_path);
        if (!os) throw IoError("cannot write " + csv_path);
        write_case_csv(report, os);
      }
      write_summary_table(report, out);
      return 0;
    }
    if (*abl) {
      const std::vector<std::string> names = preset == "all" ? kPresets : std::vector<std::string>{preset};
      for (const auto& name : names) {
        const PipelineConfig pc = ablation_preset(name, cfg);
        const auto m = enabled_modules(pc);
        out << name << ": multires " << m.multires << ", augmentation " << m.augmentation << ", topk " << m.topk
            << ", dropout " << m.dropout << "\n";
        if (!diff_preset.empty()) {
          for (const auto& k : config_diff(ablation_preset(diff_preset, cfg), pc)) {
            out << "  " << k << ": " << get_config_value(ablation_preset(diff_preset, cfg), k) << " -> "
                << get_config_value(pc, k) << "\n";
          }
        }
        if (!run_preset) {
          if (names.size() == 1) out << resolved_echo(pc);
          continue;
        }
        if (data_dir.empty()) throw ConfigError("--run needs --data");
        const fs::path dir = out_path.empty() ? fs::path{} : fs::path(out_path) / name;
        echo(pc, err, dir);
        const auto tr = cases_from_raw(data_dir, "train", pc);
        const auto va = cases_from_raw(data_dir, "val", pc);
        const PresetRun r = run_pipeline(name, pc, tr, va, &out);
        if (!dir.empty()) {
          write_history_csv(r.train, dir / "history.csv");
          if (pc.multires) write_history_csv(r.pretrain, dir / "pretrain_history.csv");
        }
        print_run(r, out);
      }
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e);
  }
  return 1;
}

}  // namespace mrseg::cli

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "mrseg/cli.hpp"
#include "mrseg/errors.hpp"
#include "mrseg/pipeline.hpp"
#include "support.hpp"

using namespace mrseg;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli_run(std::vector<std::string> args) {
  args.insert(args.begin(), "mrseg");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

const std::string kDesk = std::string(MRSEG_SOURCE_DIR) + "/configs/desk.cfg";

}  // namespace

TEST_CASE("config parsing and echo") {
  const auto c = parse_config("# comment\nloss.topk = 0.25\n\n  optim.lr=0.001  # trailing\npost.gate = false\n");
  CHECK(c.loss.topk_fraction == 0.25);
  CHECK(c.adam.lr == 0.001);
  CHECK_FALSE(c.post.gate);
  CHECK_THROWS_AS(parse_config("no.such.key = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("optim.lr = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("loss.topk = 0\n"), Error);
  CHECK_THROWS_AS(parse_config("post.connectivity = 6\n"), ConfigError);
  const auto back = parse_config(resolved_echo(c));
  CHECK(config_diff(c, back).empty());
  CHECK(config_hash(c) == config_hash(back));
  CHECK(config_hash(c) != config_hash(PipelineConfig{}));
  for (const auto& k : config_keys()) CHECK_NOTHROW(get_config_value(c, k));
  const auto desk = load_config(kDesk);
  CHECK(desk.ratio == 2);
  CHECK(desk.high.input_size == 36);
}

TEST_CASE("method defaults") {
  const PipelineConfig d;
  CHECK(d.clip_lo == -500.0f);
  CHECK(d.clip_hi == 400.0f);
  CHECK(d.loss.alpha == 0.3);
  CHECK(d.loss.gamma == 0.7);
  CHECK(d.adam.lr == 1e-5);
  CHECK(d.patience == 10);
  CHECK(d.stride == 10);
  CHECK(d.dropout_rate == 0.1);
  CHECK(d.augment.probability == 0.7);
  CHECK(d.class_weights == std::vector<double>{0.05, 0.10, 0.99});
  CHECK(d.post.dilation_iterations == 5);
  CHECK(d.post.threshold == 0.5);
  const auto cc = cascade_config(d);
  CHECK(unet_output_size(cc.low) == 20);
  CHECK(unet_output_size(cc.high) == 20);
}

TEST_CASE("ablation presets add one module at a time") {
  const auto e5 = enabled_modules(ablation_preset("E5"));
  CHECK_FALSE(e5.multires);
  CHECK_FALSE(e5.augmentation);
  CHECK_FALSE(e5.topk);
  CHECK_FALSE(e5.dropout);
  CHECK(ablation_preset("E5").loss.topk_fraction == 1.0);
  const auto e1 = enabled_modules(ablation_preset("E1"));
  CHECK(e1.multires);
  CHECK(e1.augmentation);
  CHECK(e1.topk);
  CHECK(e1.dropout);
  CHECK(config_diff(ablation_preset("E1"), ablation_preset("E2")) == std::vector<std::string>{"model.spatial_dropout"});
  CHECK(config_diff(ablation_preset("E3"), ablation_preset("E4")) == std::vector<std::string>{"augment.enabled"});
  CHECK_THROWS_AS(ablation_preset("E6"), ConfigError);
  const auto e5c = cascade_config(ablation_preset("E5"));
  CHECK_FALSE(e5c.multires);
  CHECK(e5c.high.in_channels == 1);
  CHECK(e5c.high.dropout_rate == 0.0);
}

TEST_CASE("exit codes") {
  CHECK(cli::exit_code(ConfigError("x")) == 2);
  CHECK(cli::exit_code(InvalidK("x")) == 2);
  CHECK(cli::exit_code(MissingCase("x")) == 3);
  CHECK(cli::exit_code(IoError("x")) == 3);
  CHECK(cli::exit_code(NumericsError("x")) == 4);
  CHECK(cli::exit_code(std::runtime_error("x")) == 1);
  CHECK(cli_run({"ablate", "-p", "E5", "-s", "bogus=1"}).code == 2);
  CHECK(cli_run({"frobnicate"}).code == 2);
  CHECK(cli_run({"eval", "-p", "/nonexistent/a", "-r", "/nonexistent/b"}).code == 3);
}

TEST_CASE("ablate prints presets and diffs") {
  const auto r = cli_run({"ablate", "-p", "E1", "--diff", "E2"});
  CHECK(r.code == 0);
  CHECK(r.out.find("model.spatial_dropout") != std::string::npos);
  CHECK(r.out.find("loss.alpha = 0.3") != std::string::npos);
}

TEST_CASE("end-to-end pipeline on a tiny cohort") {
  testing_support::TempDir dir("cli");
  const auto d = [&](const char* name) { return (dir / name).string(); };
  const std::vector<std::string> common{"-c", kDesk, "-s", "train.max_steps=2", "-s", "pretrain.max_steps=2",
                                        "-s", "train.max_epochs=1", "-s", "pretrain.max_epochs=1", "-j", "2"};
  const auto with = [&](std::vector<std::string> args) {
    args.insert(args.begin(), common.begin(), common.end());
    return cli_run(args);
  };
  REQUIRE(with({"phantom", "-o", d("raw"), "-n", "3", "--seed", "4"}).code == 0);
  CHECK(std::filesystem::exists(dir / "raw" / "manifest.csv"));
  CHECK(std::filesystem::exists(dir / "raw" / "resolved.cfg"));
  REQUIRE(with({"preprocess", "-d", d("raw"), "-o", d("prep")}).code == 0);
  const auto cases = cli::load_prepared(dir / "prep", "all");
  CHECK(cases.size() == 3);
  CHECK(cases[0].low_ct.spacing()[0] == 2.0);
  REQUIRE(with({"pretrain-lowres", "-d", d("prep"), "-o", d("low.ckpt")}).code == 0);
  REQUIRE(with({"train", "-d", d("prep"), "-o", d("model.ckpt"), "--init", d("low.ckpt"), "--history", d("h.csv")}).code == 0);
  CHECK(std::filesystem::exists(dir / "h.csv"));
  REQUIRE(with({"infer", "-m", d("model.ckpt"), "-d", d("prep"), "-o", d("maps"), "--split", "all"}).code == 0);
  const auto ids = cli::map_ids(dir / "maps");
  REQUIRE(ids.size() == 3);
  const auto maps = cli::read_maps(dir / "maps", ids[0], "high");
  CHECK(maps.class_count() == 3);
  REQUIRE(with({"ensemble", "-a", d("maps"), "-b", d("maps"), "-o", d("ens")}).code == 0);
  REQUIRE(with({"postprocess", "-p", d("ens"), "-o", d("seg")}).code == 0);
  CHECK(std::filesystem::exists(dir / "seg" / (ids[0] + ".nii")));
  const auto same = with({"eval", "-p", d("seg"), "-r", d("seg"), "--csv", d("e.csv")});
  CHECK(same.code == 0);
  CHECK(same.out.find("1.000") != std::string::npos);
  const auto perf = cli_run({"eval", "-p", (dir / "prep" / "fine" / "labels").string(), "-r",
                             (dir / "prep" / "fine" / "labels").string()});
  CHECK(perf.code == 0);
  std::filesystem::remove(dir / "seg" / (ids[0] + ".nii"));
  CHECK(cli_run({"eval", "-p", d("seg"), "-r", (dir / "prep" / "fine" / "labels").string()}).code == 3);
}

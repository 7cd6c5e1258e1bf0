#include "mrseg/eval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>

#include "mrseg/errors.hpp"
#include "mrseg/infer.hpp"
#include "mrseg/nifti.hpp"
#include "mrseg/rng.hpp"

namespace mrseg {

double dice(const Mask& x, const Mask& y) {
  if (x.size() != y.size()) throw AlignmentError("masks differ in size");
  std::size_t nx = 0, ny = 0, both = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    nx += x[i] != 0;
    ny += y[i] != 0;
    both += x[i] != 0 && y[i] != 0;
  }
  if (nx + ny == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(nx + ny);
}

namespace {

Mask nonzero(const Volume& v) {
  Mask m(v.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = v.data()[i] != 0.0f;
  return m;
}

std::vector<double> midranks(const std::vector<double>& pooled) {
  const std::size_t n = pooled.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double dice(const Volume& x, const Volume& y) {
  if (!x.same_geometry(y)) throw AlignmentError("volumes differ in geometry");
  return dice(nonzero(x), nonzero(y));
}

MannWhitney mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b, int exact_limit) {
  if (a.empty() || b.empty()) throw StatError("Mann-Whitney U needs two non-empty samples");
  const std::size_t na = a.size(), nb = b.size(), n = na + nb;
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto rank = midranks(pooled);
  const double base = 0.5 * static_cast<double>(na) * static_cast<double>(na + 1);
  double ra = 0.0;
  for (std::size_t i = 0; i < na; ++i) ra += rank[i];
  MannWhitney r;
  r.u = ra - base;
  const double mu = 0.5 * static_cast<double>(na) * static_cast<double>(nb);
  const double dev = std::abs(r.u - mu);

  if (static_cast<int>(n) <= exact_limit && n < 31) {
    r.exact = true;
    // every assignment of na pooled ranks to the first sample is equally likely
    std::uint64_t hits = 0, total = 0;
    for (std::uint32_t m = 0; m < (1u << n); ++m) {
      if (static_cast<std::size_t>(std::popcount(m)) != na) continue;
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (m & (1u << i)) s += rank[i];
      }
      ++total;
      if (std::abs(s - base - mu) >= dev - 1e-9) ++hits;
    }
    r.p = static_cast<double>(hits) / static_cast<double>(total);
    return r;
  }
  // tie correction
  std::vector<double> sorted(pooled);
  std::sort(sorted.begin(), sorted.end());
  double ties = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    ties += t * t * t - t;
    i = j + 1;
  }
  const double nd = static_cast<double>(n);
  const double var = mu / 6.0 * ((nd + 1.0) - ties / (nd * (nd - 1.0)));
  if (var <= 0.0) {
    r.p = 1.0;
    return r;
  }
  const double z = std::max(0.0, dev - 0.5) / std::sqrt(var);
  r.p = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return r;
}

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

Summary summarize(const std::vector<double>& scores, double ci_level, int resamples, std::uint64_t seed) {
  if (scores.empty()) throw StatError("cannot summarise an empty list");
  if (!(ci_level > 0.0 && ci_level < 1.0) || resamples < 1) throw ConfigError("invalid bootstrap settings");
  Summary s;
  s.n = scores.size();
  const double n = static_cast<double>(s.n);
  s.mean = std::accumulate(scores.begin(), scores.end(), 0.0) / n;
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : scores) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / (n - 1.0));
  }
  Rng rng(seed);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double acc = 0.0;
    for (std::size_t i = 0; i < s.n; ++i) acc += scores[rng.below(s.n)];
    m = acc / n;
  }
  std::sort(means.begin(), means.end());
  const double alpha = 1.0 - ci_level;
  s.ci_lo = quantile(means, 0.5 * alpha);
  s.ci_hi = quantile(means, 1.0 - 0.5 * alpha);
  return s;
}

std::string to_string(Metric m) {
  switch (m) {
    case Metric::Parenchyma: return "parenchyma";
    case Metric::Abnormality: return "abnormality";
    case Metric::Merged: return "merged";
    case Metric::Left: return "left";
    case Metric::Right: return "right";
  }
  return "?";
}

CaseReport evaluate_case(const std::string& id, const Volume& pred, const Volume& ref, const EvalOptions& opt) {
  if (!pred.same_geometry(ref)) throw AlignmentError("prediction and reference for " + id + " differ in geometry");
  CaseReport r;
  r.id = id;
  r.dice[Metric::Parenchyma] = dice(label_mask(pred, labels::kParenchyma), label_mask(ref, labels::kParenchyma));
  const Mask ref_abn = label_mask(ref, labels::kAbnormality);
  const bool ref_has_abn = std::any_of(ref_abn.begin(), ref_abn.end(), [](auto v) { return v != 0; });
  if (ref_has_abn || !opt.abnormality_na_when_absent) {
    r.dice[Metric::Abnormality] = dice(label_mask(pred, labels::kAbnormality), ref_abn);
  } else {
    r.dice[Metric::Abnormality] = std::nullopt;
  }
  const Volume pm = merge_format1(pred), rm = merge_format1(ref);
  r.dice[Metric::Merged] = dice(pm, rm);
  const auto [pl, pr] = split_left_right(pm);
  const auto [rl, rr] = split_left_right(rm);
  r.dice[Metric::Left] = dice(pl, rl);
  r.dice[Metric::Right] = dice(pr, rr);
  const double voxel = ref.spacing()[0] * ref.spacing()[1] * ref.spacing()[2];
  const auto count = [](const Volume& v) {
    return static_cast<double>(std::count_if(v.data().begin(), v.data().end(), [](float x) { return x != 0.0f; }));
  };
  r.pred_volume_mm3 = count(pm) * voxel;
  r.ref_volume_mm3 = count(rm) * voxel;
  return r;
}

CohortReport summarize_cohort(std::vector<CaseReport> cases, const EvalOptions& opt) {
  CohortReport r;
  r.cases = std::move(cases);
  for (Metric m : kMetrics) {
    std::vector<double> v;
    for (const auto& c : r.cases) {
      auto it = c.dice.find(m);
      if (it != c.dice.end() && it->second) v.push_back(*it->second);
    }
    if (!v.empty()) r.summary[m] = summarize(v, opt.ci_level, opt.resamples, opt.seed);
  }
  return r;
}

namespace {

std::set<std::string> case_ids(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw MissingCase("directory " + dir.string() + " does not exist");
  std::set<std::string> ids;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".nii") ids.insert(e.path().stem().string());
  }
  return ids;
}

}  // namespace

CohortReport evaluate_cohort(const std::filesystem::path& pred_dir, const std::filesystem::path& ref_dir,
                             const EvalOptions& opt) {
  const auto pred_ids = case_ids(pred_dir);
  const auto ref_ids = case_ids(ref_dir);
  for (const auto& id : ref_ids) {
    if (!pred_ids.count(id)) throw MissingCase("no prediction for case " + id);
  }
  for (const auto& id : pred_ids) {
    if (!ref_ids.count(id)) throw MissingCase("no reference for case " + id);
  }
  std::vector<CaseReport> cases;
  for (const auto& id : ref_ids) {
    const Volume pred = nifti::read(pred_dir / (id + ".nii"), VolumeKind::Labels);
    const Volume ref = nifti::read(ref_dir / (id + ".nii"), VolumeKind::Labels);
    cases.push_back(evaluate_case(id, pred, ref, opt));
  }
  return summarize_cohort(std::move(cases), opt);
}

void write_case_csv(const CohortReport& r, std::ostream& os) {
  os << "case";
  for (Metric m : kMetrics) os << ',' << to_string(m);
  os << ",pred_volume_mm3,ref_volume_mm3\n";
  os << std::setprecision(10);
  for (const auto& c : r.cases) {
    os << c.id;
    for (Metric m : kMetrics) {
      auto it = c.dice.find(m);
      os << ',';
      if (it != c.dice.end() && it->second) os << *it->second;
      else os << "NA";
    }
    os << ',' << c.pred_volume_mm3 << ',' << c.ref_volume_mm3 << '\n';
  }
}

void write_summary_table(const CohortReport& r, std::ostream& os) {
  os << std::left << std::setw(14) << "metric" << std::right << std::setw(5) << "n" << std::setw(10) << "mean"
     << std::setw(10) << "sd" << std::setw(10) << "ci_lo" << std::setw(10) << "ci_hi" << '\n';
  os << std::fixed << std::setprecision(4);
  for (Metric m : kMetrics) {
    auto it = r.summary.find(m);
    os << std::left << std::setw(14) << to_string(m) << std::right;
    if (it == r.summary.end()) {
      os << std::setw(5) << 0 << std::setw(10) << "NA" << '\n';
      continue;
    }
    const auto& s = it->second;
    os << std::setw(5) << s.n << std::setw(10) << s.mean << std::setw(10) << s.sd << std::setw(10) << s.ci_lo
       << std::setw(10) << s.ci_hi << '\n';
  }
  os.unsetf(std::ios::fixed);
}

std::map<Metric, MannWhitney> compare_systems(const CohortReport& a, const CohortReport& b) {
  std::map<Metric, MannWhitney> out;
  const auto scores = [](const CohortReport& r, Metric m) {
    std::vector<double> v;
    for (const auto& c : r.cases) {
      auto it = c.dice.find(m);
      if (it != c.dice.end() && it->second) v.push_back(*it->second);
    }
    return v;
  };
  for (Metric m : kMetrics) {
    const auto va = scores(a, m), vb = scores(b, m);
    if (!va.empty() && !vb.empty()) out[m] = mann_whitney_u(va, vb);
  }
  return out;
}

}  // namespace mrseg

#include "mrseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mrseg/errors.hpp"
#include "mrseg/morphology.hpp"
#include "mrseg/nifti.hpp"

namespace mrseg {

namespace {

Vec3 position(const PhantomSpec& s, int x, int y, int z) {
  return {s.origin[0] + x * s.spacing[0], s.origin[1] + y * s.spacing[1], s.origin[2] + z * s.spacing[2]};
}

void check_inside(const PhantomSpec& s, const Vec3& c, const Vec3& r, const std::string& what) {
  for (int a = 0; a < 3; ++a) {
    const double lo = s.origin[a] - 0.5 * s.spacing[a];
    const double hi = s.origin[a] + (s.dims[a] - 0.5) * s.spacing[a];
    if (c[a] - r[a] < lo || c[a] + r[a] > hi) throw GeometryError(what + " extends outside the volume");
  }
}

bool in_ellipsoid(const Ellipsoid& e, const Vec3& p) {
  double q = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double d = (p[a] - e.center_mm[a]) / e.semi_axes_mm[a];
    q += d * d;
  }
  return q <= 1.0;
}

bool in_sphere(const Sphere& s, const Vec3& p) {
  double q = 0.0;
  for (int a = 0; a < 3; ++a) q += (p[a] - s.center_mm[a]) * (p[a] - s.center_mm[a]);
  return q <= s.radius_mm * s.radius_mm;
}

}  // namespace

Phantom generate(const PhantomSpec& s) {
  for (int a = 0; a < 3; ++a) {
    if (s.dims[a] < 1 || s.spacing[a] <= 0.0) throw GeometryError("invalid phantom grid");
  }
  for (const auto& k : s.kidneys) {
    for (double r : k.semi_axes_mm) {
      if (r <= 0.0) throw GeometryError("kidney semi-axes must be positive");
    }
    check_inside(s, k.center_mm, k.semi_axes_mm, "kidney");
  }
  for (const auto& ab : s.abnormalities) {
    if (ab.radius_mm <= 0.0) throw GeometryError("abnormality radius must be positive");
    check_inside(s, ab.center_mm, {ab.radius_mm, ab.radius_mm, ab.radius_mm}, "abnormality");
  }
  const Dims3 d = s.dims;
  const std::size_t n = d.count();
  std::vector<float> lab(n, labels::kBackground);
  std::vector<double> base(n, s.noise_mean);
  std::vector<int> owner(n, -1);  // abnormality index per voxel
  std::size_t i = 0;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x, ++i) {
        const Vec3 p = position(s, x, y, z);
        for (const auto& k : s.kidneys) {
          if (in_ellipsoid(k, p)) {
            lab[i] = labels::kParenchyma;
            base[i] = k.hu;
          }
        }
        for (std::size_t a = 0; a < s.abnormalities.size(); ++a) {
          if (in_sphere(s.abnormalities[a], p)) {
            lab[i] = labels::kAbnormality;
            base[i] = s.abnormalities[a].hu;
            owner[i] = static_cast<int>(a);
          }
        }
      }

  Mask kidney(n), paren(n);
  for (std::size_t j = 0; j < n; ++j) {
    paren[j] = lab[j] == labels::kParenchyma;
    kidney[j] = paren[j];
  }
  // kidney footprint regardless of what was painted over it
  i = 0;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x, ++i) {
        if (kidney[i]) continue;
        const Vec3 p = position(s, x, y, z);
        for (const auto& k : s.kidneys) kidney[i] |= in_ellipsoid(k, p);
      }
  const Mask near_kidney = dilate(kidney, d, kDetachedGap - 1);
  std::vector<std::uint8_t> touched(s.abnormalities.size(), 0), present(s.abnormalities.size(), 0), close(s.abnormalities.size(), 0);
  i = 0;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x, ++i) {
        if (owner[i] < 0) continue;
        const auto a = static_cast<std::size_t>(owner[i]);
        present[a] = 1;
        if (near_kidney[i]) close[a] = 1;
        if (!touched[a] && touches(paren, d, x, y, z)) touched[a] = 1;
      }
  for (std::size_t a = 0; a < s.abnormalities.size(); ++a) {
    const std::string tag = "abnormality " + std::to_string(a);
    if (!present[a]) throw GeometryError(tag + " covers no voxel centre");
    if (s.abnormalities[a].attached && !touched[a]) throw GeometryError(tag + " is not attached to parenchyma");
    if (!s.abnormalities[a].attached && close[a]) {
      throw GeometryError(tag + " lies within " + std::to_string(kDetachedGap) + " voxels of a kidney");
    }
  }

  Rng rng(s.seed);
  std::vector<float> ct(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double v = base[j] + rng.normal(0.0, s.noise_sd);
    ct[j] = std::clamp(static_cast<float>(v), s.clip_lo, s.clip_hi);
  }
  Phantom ph;
  ph.ct = Volume(d, s.spacing, s.origin, VolumeKind::Intensity, std::move(ct));
  ph.labels = Volume(d, s.spacing, s.origin, VolumeKind::Labels, std::move(lab));
  return ph;
}

PhantomSpec random_spec(Rng& rng, Dims3 dims, Vec3 spacing, bool with_abnormality, const ShapeRanges& ranges) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    PhantomSpec s;
    s.dims = dims;
    s.spacing = spacing;
    s.seed = rng.next();
    Vec3 ext;
    for (int a = 0; a < 3; ++a) ext[a] = dims[a] * spacing[a];
    for (int side = 0; side < 2; ++side) {
      Ellipsoid k;
      k.semi_axes_mm = {rng.uniform(0.12, 0.16) * ext[0], rng.uniform(0.16, 0.22) * ext[1],
                        rng.uniform(0.20, 0.28) * ext[2]};
      k.center_mm = {(side ? 0.72 : 0.28) * ext[0] + rng.uniform(-0.02, 0.02) * ext[0],
                     (0.5 + rng.uniform(-0.05, 0.05)) * ext[1], (0.5 + rng.uniform(-0.05, 0.05)) * ext[2]};
      for (int a = 0; a < 3; ++a) k.center_mm[a] -= 0.5 * spacing[a];
      k.hu = rng.uniform(ranges.kidney_hu_lo, ranges.kidney_hu_hi);
      s.kidneys.push_back(k);
    }
    if (with_abnormality) {
      const int count = 1 + static_cast<int>(rng.below(2));
      for (int m = 0; m < count; ++m) {
        const auto& k = s.kidneys[rng.below(2)];
        // random point on the kidney surface
        Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
        double q = 0.0;
        for (int a = 0; a < 3; ++a) q += (dir[a] / k.semi_axes_mm[a]) * (dir[a] / k.semi_axes_mm[a]);
        const double t = 1.0 / std::sqrt(q);
        Sphere sp;
        for (int a = 0; a < 3; ++a) sp.center_mm[a] = k.center_mm[a] + t * dir[a];
        const double lmin = std::min({ext[0], ext[1], ext[2]});
        sp.radius_mm = rng.uniform(0.06, 0.10) * lmin;
        sp.hu = rng.uniform(ranges.abnormality_hu_lo, ranges.abnormality_hu_hi);
        sp.attached = true;
        s.abnormalities.push_back(sp);
      }
    }
    try {
      generate(s);
      return s;
    } catch (const GeometryError&) {
      continue;
    }
  }
  throw GeometryError("could not place phantom shapes in the requested grid");
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_train_val(std::vector<std::string> ids,
                                                                              std::uint64_t seed,
                                                                              double train_fraction) {
  std::sort(ids.begin(), ids.end());
  Rng rng(seed);
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);
  std::size_t nt = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(ids.size())));
  if (ids.size() >= 2) nt = std::clamp<std::size_t>(nt, 1, ids.size() - 1);
  else nt = ids.size();
  std::vector<std::string> train(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(nt));
  std::vector<std::string> val(ids.begin() + static_cast<std::ptrdiff_t>(nt), ids.end());
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

std::vector<PhantomCase> make_cohort(int n, std::uint64_t seed, const CohortConfig& cfg) {
  if (n < 3) throw ConfigError("a cohort needs at least 3 cases");
  if (cfg.abnormality_fraction < 0.0 || cfg.abnormality_fraction > 1.0) throw ConfigError("abnormality fraction must lie in [0, 1]");
  Rng rng(seed);
  const auto with_abn = static_cast<std::size_t>(std::lround(cfg.abnormality_fraction * n));
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(n), 0);
  std::fill(flags.begin(), flags.begin() + static_cast<std::ptrdiff_t>(with_abn), 1);
  for (std::size_t i = flags.size(); i > 1; --i) std::swap(flags[i - 1], flags[rng.below(i)]);

  std::vector<PhantomCase> cohort;
  std::vector<std::string> ids;
  for (int c = 0; c < n; ++c) {
    PhantomCase pc;
    char buf[32];
    std::snprintf(buf, sizeof buf, "case%03d", c);
    pc.id = buf;
    pc.has_abnormality = flags[static_cast<std::size_t>(c)] != 0;
    pc.phantom = generate(random_spec(rng, cfg.dims, cfg.spacing, pc.has_abnormality));
    ids.push_back(pc.id);
    cohort.push_back(std::move(pc));
  }
  const auto n_test = static_cast<std::size_t>(std::lround(cfg.test_fraction * n));
  std::vector<std::string> pool(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(n_test));
  const auto [train, val] = split_train_val(pool, rng.next(), cfg.train_fraction);
  for (auto& pc : cohort) {
    if (std::find(train.begin(), train.end(), pc.id) != train.end()) pc.split = "train";
    else if (std::find(val.begin(), val.end(), pc.id) != val.end()) pc.split = "val";
    else pc.split = "test";
  }
  return cohort;
}

void write_cohort(const std::vector<PhantomCase>& cohort, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "ct", ec);
  std::filesystem::create_directories(dir / "labels", ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw IoError("cannot write manifest in " + dir.string());
  manifest << "case,split,has_abnormality\n";
  for (const auto& c : cohort) {
    nifti::write(c.phantom.ct, dir / "ct" / (c.id + ".nii"));
    nifti::write(c.phantom.labels, dir / "labels" / (c.id + ".nii"));
    manifest << c.id << ',' << c.split << ',' << (c.has_abnormality ? 1 : 0) << '\n';
  }
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingCase("manifest " + path.string() + " not found");
  std::vector<ManifestEntry> out;
  std::string line;
  std::getline(in, line);
  if (line.rfind("case,split", 0) != 0) throw CorruptFile("manifest header missing in " + path.string());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    ManifestEntry e;
    std::string flag;
    std::getline(ss, e.id, ',');
    std::getline(ss, e.split, ',');
    std::getline(ss, flag, ',');
    e.has_abnormality = flag == "1";
    out.push_back(e);
  }
  return out;
}

}  // namespace mrseg

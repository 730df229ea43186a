#include "pclap/probes.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "json.hpp"
#include "pclap/random.hpp"

namespace pclap {

std::string probe_kind_name(ProbeKind kind) {
  switch (kind) {
    case ProbeKind::Spectral: return "spectral";
    case ProbeKind::Sinusoid: return "sinusoid";
    case ProbeKind::Polynomial: return "polynomial";
  }
  return "unknown";
}

namespace {

ProbeKind parse_kind(const std::string& s) {
  for (auto k : {ProbeKind::Spectral, ProbeKind::Sinusoid, ProbeKind::Polynomial})
    if (probe_kind_name(k) == s) return k;
  throw std::runtime_error("unknown probe kind '" + s + "'");
}

ProbeSet sinusoid_set(const PointCloud& points, const std::vector<ProbeMeta>& metas) {
  ProbeSet set{Matrix(points.points.size(), metas.size()), metas};
  for (std::size_t i = 0; i < points.points.size(); ++i)
    for (std::size_t c = 0; c < metas.size(); ++c) set.values(i, c) = sinusoid_value(metas[c], points.points[i]);
  return set;
}

}  // namespace

void ProbeSet::append(const ProbeSet& other) {
  if (meta.empty()) {
    *this = other;
    return;
  }
  if (other.values.rows != values.rows) throw std::invalid_argument("ProbeSet::append: vertex count mismatch");
  Matrix merged(values.rows, values.cols + other.values.cols);
  for (std::size_t i = 0; i < values.rows; ++i) {
    for (std::size_t c = 0; c < values.cols; ++c) merged(i, c) = values(i, c);
    for (std::size_t c = 0; c < other.values.cols; ++c) merged(i, values.cols + c) = other.values(i, c);
  }
  values = std::move(merged);
  meta.insert(meta.end(), other.meta.begin(), other.meta.end());
}

double sinusoid_value(const ProbeMeta& m, const Vec3& p) {
  return std::sin(m.k * m.psi * (m.a * p.x + m.b * p.y + m.c * p.z) + m.phi) / (2.0 * m.k);
}

ProbeSet spectral_probes_from(const EigenPairs& eig, std::size_t count) {
  if (eig.size() < count + 1)
    throw std::invalid_argument("spectral_probes: need " + std::to_string(count + 1) + " eigenpairs");
  const std::size_t n = eig.vectors[0].size();
  ProbeSet set{Matrix(n, count), {}};
  for (std::size_t c = 0; c < count; ++c) {
    const double lambda = eig.values[c + 1];
    const double s = 1.0 / (lambda + kSpectralShift);
    for (std::size_t i = 0; i < n; ++i) set.values(i, c) = s * eig.vectors[c + 1][i];
    ProbeMeta m;
    m.kind = ProbeKind::Spectral;
    m.lambda = lambda;
    m.name = "eig" + std::to_string(c + 1);
    set.meta.push_back(m);
  }
  return set;
}

ProbeSet spectral_probes(const LaplacianPair& gt, std::size_t count, std::uint64_t seed) {
  if (count + 1 >= gt.size()) throw std::invalid_argument("spectral_probes: count must be below n - 1");
  return spectral_probes_from(eig_smallest(gt.stiffness, gt.mass, count + 1, {.seed = seed}), count);
}

ProbeSet spatial_probes(const PointCloud& points, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ProbeMeta> metas;
  for (int m = 0; m < kSpatialFrequencyCount; ++m) {
    ProbeMeta meta;
    meta.kind = ProbeKind::Sinusoid;
    meta.k = std::exp2(0.5 * m);
    meta.psi = rng.uniform(0.75, 1.25);
    meta.phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    // Dirichlet(1,1,1)
    const double ea = rng.exponential(), eb = rng.exponential(), ec = rng.exponential();
    const double s = ea + eb + ec;
    meta.a = ea / s;
    meta.b = eb / s;
    meta.c = 1.0 - meta.a - meta.b;
    meta.name = "sin_m" + std::to_string(m);
    metas.push_back(meta);
  }
  return sinusoid_set(points, metas);
}

ProbeSet eval_probe_set_from(const EigenPairs& eig, const PointCloud& points) {
  ProbeSet set = spectral_probes_from(eig, kSpectralProbeCount);
  if (set.num_vertices() != points.points.size()) throw std::invalid_argument("eval_probe_set: size mismatch");
  set.append(eval_fixed_probes(points));
  return set;
}

ProbeSet eval_fixed_probes(const PointCloud& points) {
  std::vector<ProbeMeta> metas;
  const char* axes = "xyz";
  for (int axis = 0; axis < 3; ++axis)
    for (int e = 0; e <= 6; ++e)
      for (double phi : {0.0, std::numbers::pi / 2}) {
        ProbeMeta m;
        m.kind = ProbeKind::Sinusoid;
        m.k = std::exp2(e);
        m.phi = phi;
        (axis == 0 ? m.a : axis == 1 ? m.b : m.c) = 1.0;
        m.name = std::string("sin_") + axes[axis] + "_k" + std::to_string(1 << e) + (phi == 0.0 ? "" : "_cos");
        metas.push_back(m);
      }
  ProbeSet set = sinusoid_set(points, metas);

  ProbeSet poly{Matrix(points.points.size(), 6), {}};
  for (int c = 0; c < 6; ++c) {
    ProbeMeta m;
    m.kind = ProbeKind::Polynomial;
    m.name = std::string(1, axes[c % 3]) + (c >= 3 ? "^2" : "");
    poly.meta.push_back(m);
  }
  for (std::size_t i = 0; i < points.points.size(); ++i)
    for (int c = 0; c < 6; ++c) {
      const double t = points.points[i][c % 3];
      poly.values(i, c) = c >= 3 ? t * t : t;
    }
  set.append(poly);
  return set;
}

ProbeSet eval_probe_set(const LaplacianPair& gt, const PointCloud& points, std::uint64_t seed) {
  return eval_probe_set_from(eig_smallest(gt.stiffness, gt.mass, kSpectralProbeCount + 1, {.seed = seed}), points);
}

void save_probes(const ProbeSet& set, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "binary probe files are little-endian");
  nlohmann::ordered_json header;
  header["format"] = "pclap-probes";
  header["rows"] = set.values.rows;
  header["cols"] = set.values.cols;
  header["dtype"] = "f64";
  auto& meta = header["meta"] = nlohmann::json::array();
  for (const auto& m : set.meta)
    meta.push_back({{"kind", probe_kind_name(m.kind)}, {"name", m.name}, {"lambda", m.lambda}, {"k", m.k},
                    {"psi", m.psi}, {"phi", m.phi}, {"a", m.a}, {"b", m.b}, {"c", m.c}});
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(set.values.data.data()),
            static_cast<std::streamsize>(set.values.data.size() * sizeof(double)));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

ProbeSet load_probes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  const auto header = nlohmann::json::parse(line);
  if (header.value("format", "") != "pclap-probes") throw std::runtime_error("not a probe file: " + path.string());
  ProbeSet set{Matrix(header.at("rows").get<std::size_t>(), header.at("cols").get<std::size_t>()), {}};
  for (const auto& m : header.at("meta")) {
    ProbeMeta meta;
    meta.kind = parse_kind(m.at("kind").get<std::string>());
    meta.name = m.at("name").get<std::string>();
    meta.lambda = m.at("lambda").get<double>();
    meta.k = m.at("k").get<double>();
    meta.psi = m.at("psi").get<double>();
    meta.phi = m.at("phi").get<double>();
    meta.a = m.at("a").get<double>();
    meta.b = m.at("b").get<double>();
    meta.c = m.at("c").get<double>();
    set.meta.push_back(meta);
  }
  in.read(reinterpret_cast<char*>(set.values.data.data()),
          static_cast<std::streamsize>(set.values.data.size() * sizeof(double)));
  if (!in) throw std::runtime_error("truncated probe file: " + path.string());
  return set;
}

void save_probes_csv(const ProbeSet& set, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t c = 0; c < set.meta.size(); ++c) out << (c ? "," : "") << set.meta[c].name;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < set.values.rows; ++i) {
    for (std::size_t c = 0; c < set.values.cols; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", set.values(i, c));
      out << (c ? "," : "") << buf;
    }
    out << '\n';
  }
}

}  // namespace pclap

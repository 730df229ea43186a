#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pclap/geometry.hpp"

namespace pclap {
namespace {

static_assert(std::endian::native == std::endian::little, "binary PLY IO assumes little endian");

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string lower_ext(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

double to_double(std::string_view tok, std::size_t line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError("bad number '" + std::string(tok) + "'", line);
  return v;
}

long to_long(std::string_view tok, std::size_t line) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc()) throw ParseError("bad integer '" + std::string(tok) + "'", line);
  return v;
}

void check_indices(const Mesh& mesh) {
  const std::size_t n = mesh.vertices.size();
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
    for (std::size_t v : mesh.triangles[t])
      if (v >= n)
        throw std::out_of_range("face " + std::to_string(t) + " references vertex " +
                                std::to_string(v) + " but only " + std::to_string(n) + " exist");
}

void fan(const std::vector<std::size_t>& poly, std::vector<Triangle>& out) {
  for (std::size_t k = 1; k + 1 < poly.size(); ++k) out.push_back({poly[0], poly[k], poly[k + 1]});
}

// ---- PLY ----

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

PlyType parse_ply_type(std::string_view s, std::size_t line) {
  if (s == "char" || s == "int8") return PlyType::Int8;
  if (s == "uchar" || s == "uint8") return PlyType::UInt8;
  if (s == "short" || s == "int16") return PlyType::Int16;
  if (s == "ushort" || s == "uint16") return PlyType::UInt16;
  if (s == "int" || s == "int32") return PlyType::Int32;
  if (s == "uint" || s == "uint32") return PlyType::UInt32;
  if (s == "float" || s == "float32") return PlyType::Float32;
  if (s == "double" || s == "float64") return PlyType::Float64;
  throw ParseError("unknown PLY type '" + std::string(s) + "'", line);
}

std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::Int8:
    case PlyType::UInt8: return 1;
    case PlyType::Int16:
    case PlyType::UInt16: return 2;
    case PlyType::Int32:
    case PlyType::UInt32:
    case PlyType::Float32: return 4;
    case PlyType::Float64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type;
  bool is_list = false;
  PlyType count_type = PlyType::UInt8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

class BinaryReader {
 public:
  BinaryReader(std::string_view data, std::size_t offset) : data_(data), pos_(offset) {}

  double read(PlyType t) {
    const std::size_t sz = ply_size(t);
    if (pos_ + sz > data_.size()) throw ParseError("unexpected end of binary PLY payload", pos_);
    const char* p = data_.data() + pos_;
    pos_ += sz;
    switch (t) {
      case PlyType::Int8: return load<std::int8_t>(p);
      case PlyType::UInt8: return load<std::uint8_t>(p);
      case PlyType::Int16: return load<std::int16_t>(p);
      case PlyType::UInt16: return load<std::uint16_t>(p);
      case PlyType::Int32: return load<std::int32_t>(p);
      case PlyType::UInt32: return load<std::uint32_t>(p);
      case PlyType::Float32: return load<float>(p);
      case PlyType::Float64: return load<double>(p);
    }
    return 0.0;
  }
  std::size_t pos() const { return pos_; }

 private:
  template <typename T>
  static double load(const char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return static_cast<double>(v);
  }
  std::string_view data_;
  std::size_t pos_;
};

Mesh parse_ply(const std::string& data) {
  std::size_t pos = 0;
  std::size_t line_no = 0;
  auto next_line = [&]() -> std::string_view {
    if (pos >= data.size()) throw ParseError("PLY header not terminated", line_no);
    std::size_t end = data.find('\n', pos);
    if (end == std::string::npos) end = data.size();
    std::string_view line(data.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    return line;
  };

  if (next_line() != "ply") throw ParseError("missing 'ply' magic", 1);
  bool binary = false;
  std::vector<PlyElement> elements;
  for (;;) {
    const auto tok = split_ws(next_line());
    if (tok.empty()) continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "format") {
      if (tok.size() < 2) throw ParseError("bad format line", line_no);
      if (tok[1] == "ascii") binary = false;
      else if (tok[1] == "binary_little_endian") binary = true;
      else throw ParseError("unsupported PLY format '" + std::string(tok[1]) + "'", line_no);
    } else if (tok[0] == "element") {
      if (tok.size() != 3) throw ParseError("bad element line", line_no);
      elements.push_back({std::string(tok[1]), static_cast<std::size_t>(to_long(tok[2], line_no)), {}});
    } else if (tok[0] == "property") {
      if (elements.empty()) throw ParseError("property before element", line_no);
      PlyProperty prop;
      if (tok.size() == 5 && tok[1] == "list") {
        prop.is_list = true;
        prop.count_type = parse_ply_type(tok[2], line_no);
        prop.type = parse_ply_type(tok[3], line_no);
        prop.name = tok[4];
      } else if (tok.size() == 3) {
        prop.type = parse_ply_type(tok[1], line_no);
        prop.name = tok[2];
      } else {
        throw ParseError("bad property line", line_no);
      }
      elements.back().props.push_back(prop);
    } else {
      throw ParseError("unexpected header keyword '" + std::string(tok[0]) + "'", line_no);
    }
  }

  Mesh mesh;
  BinaryReader reader(data, pos);
  for (const PlyElement& el : elements) {
    const bool is_vertex = el.name == "vertex";
    const bool is_face = el.name == "face";
    int ix = -1, iy = -1, iz = -1, iface = -1;
    for (std::size_t k = 0; k < el.props.size(); ++k) {
      const auto& name = el.props[k].name;
      if (name == "x") ix = static_cast<int>(k);
      if (name == "y") iy = static_cast<int>(k);
      if (name == "z") iz = static_cast<int>(k);
      if (el.props[k].is_list && (name == "vertex_indices" || name == "vertex_index")) iface = static_cast<int>(k);
    }
    if (is_vertex && (ix < 0 || iy < 0 || iz < 0)) throw ParseError("vertex element lacks x/y/z", line_no);

    for (std::size_t r = 0; r < el.count; ++r) {
      Vec3 p;
      std::vector<std::size_t> poly;
      if (binary) {
        for (std::size_t k = 0; k < el.props.size(); ++k) {
          const auto& prop = el.props[k];
          if (prop.is_list) {
            const auto cnt = static_cast<std::size_t>(reader.read(prop.count_type));
            for (std::size_t q = 0; q < cnt; ++q) {
              const double v = reader.read(prop.type);
              if (static_cast<int>(k) == iface) {
                if (v < 0) throw ParseError("negative vertex index", reader.pos());
                poly.push_back(static_cast<std::size_t>(v));
              }
            }
          } else {
            const double v = reader.read(prop.type);
            if (static_cast<int>(k) == ix) p.x = v;
            if (static_cast<int>(k) == iy) p.y = v;
            if (static_cast<int>(k) == iz) p.z = v;
          }
        }
      } else {
        const auto tok = split_ws(next_line());
        std::size_t t = 0;
        auto take = [&]() {
          if (t >= tok.size()) throw ParseError("too few values in PLY row", line_no);
          return tok[t++];
        };
        for (std::size_t k = 0; k < el.props.size(); ++k) {
          const auto& prop = el.props[k];
          if (prop.is_list) {
            const long cnt = to_long(take(), line_no);
            for (long q = 0; q < cnt; ++q) {
              const long v = to_long(take(), line_no);
              if (static_cast<int>(k) == iface) {
                if (v < 0) throw ParseError("negative vertex index", line_no);
                poly.push_back(static_cast<std::size_t>(v));
              }
            }
          } else {
            const double v = to_double(take(), line_no);
            if (static_cast<int>(k) == ix) p.x = v;
            if (static_cast<int>(k) == iy) p.y = v;
            if (static_cast<int>(k) == iz) p.z = v;
          }
        }
      }
      if (is_vertex) mesh.vertices.push_back(p);
      if (is_face) fan(poly, mesh.triangles);
    }
  }
  check_indices(mesh);
  return mesh;
}

template <typename T>
void put(std::string& buf, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.append(bytes, sizeof(T));
}

std::string fmt17(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

Mesh parse_obj(std::string_view text) {
  Mesh mesh;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto tok = split_ws(line);
    if (tok.empty()) {
      if (end == text.size()) break;
      continue;
    }
    if (tok[0] == "v") {
      if (tok.size() < 4) throw ParseError("vertex record needs 3 coordinates", line_no);
      mesh.vertices.push_back({to_double(tok[1], line_no), to_double(tok[2], line_no), to_double(tok[3], line_no)});
    } else if (tok[0] == "f") {
      if (tok.size() < 4) throw ParseError("face record needs at least 3 vertices", line_no);
      std::vector<std::size_t> poly;
      for (std::size_t k = 1; k < tok.size(); ++k) {
        const std::string_view ref = tok[k].substr(0, tok[k].find('/'));
        long idx = to_long(ref, line_no);
        if (idx < 0) idx += static_cast<long>(mesh.vertices.size()) + 1;
        if (idx <= 0) throw ParseError("invalid face index '" + std::string(ref) + "'", line_no);
        poly.push_back(static_cast<std::size_t>(idx - 1));
      }
      fan(poly, mesh.triangles);
    }
    if (end == text.size()) break;
  }
  check_indices(mesh);
  return mesh;
}

Mesh load_obj(const std::filesystem::path& path) { return parse_obj(read_file(path)); }

Mesh load_ply(const std::filesystem::path& path) { return parse_ply(read_file(path)); }

Mesh load_mesh(const std::filesystem::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".obj") return load_obj(path);
  if (ext == ".ply") return load_ply(path);
  throw std::invalid_argument("unsupported mesh format: " + path.string());
}

void save_obj(const Mesh& mesh, const std::filesystem::path& path) {
  std::string out;
  for (const Vec3& p : mesh.vertices) out += "v " + fmt17(p.x) + " " + fmt17(p.y) + " " + fmt17(p.z) + "\n";
  for (const auto& t : mesh.triangles)
    out += "f " + std::to_string(t[0] + 1) + " " + std::to_string(t[1] + 1) + " " + std::to_string(t[2] + 1) + "\n";
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << out;
}

void save_ply(const std::filesystem::path& path, std::span<const Vec3> vertices,
              std::span<const Triangle> triangles, std::span<const Rgb> colors, PlyFormat format) {
  if (!colors.empty() && colors.size() != vertices.size())
    throw std::invalid_argument("save_ply: color count does not match vertex count");
  const bool binary = format == PlyFormat::BinaryLittleEndian;
  std::string out = "ply\nformat ";
  out += binary ? "binary_little_endian 1.0\n" : "ascii 1.0\n";
  out += "element vertex " + std::to_string(vertices.size()) + "\n";
  const char* ftype = binary ? "float" : "double";
  for (const char* axis : {"x", "y", "z"}) out += std::string("property ") + ftype + " " + axis + "\n";
  if (!colors.empty()) out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  if (!triangles.empty()) {
    out += "element face " + std::to_string(triangles.size()) + "\n";
    out += "property list uchar int vertex_indices\n";
  }
  out += "end_header\n";
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    const Vec3& p = vertices[i];
    if (binary) {
      put(out, static_cast<float>(p.x));
      put(out, static_cast<float>(p.y));
      put(out, static_cast<float>(p.z));
      if (!colors.empty()) {
        put(out, colors[i].r);
        put(out, colors[i].g);
        put(out, colors[i].b);
      }
    } else {
      out += fmt17(p.x) + " " + fmt17(p.y) + " " + fmt17(p.z);
      if (!colors.empty())
        out += " " + std::to_string(colors[i].r) + " " + std::to_string(colors[i].g) + " " +
               std::to_string(colors[i].b);
      out += "\n";
    }
  }
  for (const auto& t : triangles) {
    if (binary) {
      put(out, static_cast<std::uint8_t>(3));
      for (std::size_t v : t) put(out, static_cast<std::int32_t>(v));
    } else {
      out += "3 " + std::to_string(t[0]) + " " + std::to_string(t[1]) + " " + std::to_string(t[2]) + "\n";
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << out;
}

PointCloud load_point_cloud(const std::filesystem::path& path) {
  const std::string ext = lower_ext(path);
  PointCloud cloud;
  if (ext == ".ply" || ext == ".obj") {
    cloud.points = load_mesh(path).vertices;
  } else if (ext == ".xyz" || ext == ".txt") {
    const std::string text = read_file(path);
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto tok = split_ws(line);
      if (tok.empty() || tok[0].front() == '#') continue;
      if (tok.size() < 3) throw ParseError("point needs 3 coordinates", line_no);
      cloud.points.push_back({to_double(tok[0], line_no), to_double(tok[1], line_no), to_double(tok[2], line_no)});
    }
  } else {
    throw std::invalid_argument("unsupported point cloud format: " + path.string());
  }
  for (const Vec3& p : cloud.points)
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      throw std::invalid_argument("point cloud has non-finite coordinates");
  return cloud;
}

void save_point_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  save_ply(path, cloud.points);
}

namespace {

std::array<Rgb, 256> build_viridis() {
  // Anchor samples of viridis at t = 0, 1/8, ..., 1.
  constexpr std::array<std::array<double, 3>, 9> anchors{{{68, 1, 84},
                                                          {72, 40, 120},
                                                          {62, 73, 137},
                                                          {49, 104, 142},
                                                          {38, 130, 142},
                                                          {31, 158, 137},
                                                          {53, 183, 121},
                                                          {110, 206, 88},
                                                          {253, 231, 37}}};
  std::array<Rgb, 256> table{};
  for (int i = 0; i < 256; ++i) {
    const double s = i / 255.0 * 8.0;
    const int k = std::min(7, static_cast<int>(s));
    const double f = s - k;
    std::array<std::uint8_t, 3> c{};
    for (int ch = 0; ch < 3; ++ch)
      c[ch] = static_cast<std::uint8_t>(std::lround(anchors[k][ch] * (1.0 - f) + anchors[k + 1][ch] * f));
    table[i] = {c[0], c[1], c[2]};
  }
  return table;
}

}  // namespace

Rgb colormap(double t) {
  static const std::array<Rgb, 256> table = build_viridis();
  if (!std::isfinite(t)) t = 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return table[static_cast<std::size_t>(std::lround(t * 255.0))];
}

std::vector<Rgb> colorize(std::span<const double> values, std::optional<double> lo, std::optional<double> hi) {
  double a = lo.value_or(values.empty() ? 0.0 : *std::min_element(values.begin(), values.end()));
  double b = hi.value_or(values.empty() ? 1.0 : *std::max_element(values.begin(), values.end()));
  const double span = b - a;
  std::vector<Rgb> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(colormap(span > 0.0 ? (v - a) / span : 0.0));
  return out;
}

}  // namespace pclap

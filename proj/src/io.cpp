#include "skytrack/io.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

namespace skytrack {

namespace fs = std::filesystem;

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& in, const fs::path& path) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw IoError("truncated file: " + path.string());
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return in;
}

void write_header(std::ostream& out, const char* magic, Eigen::Index rows, Eigen::Index cols) {
  out.write(magic, 4);
  put_u32(out, static_cast<std::uint32_t>(rows));
  put_u32(out, static_cast<std::uint32_t>(cols));
}

std::pair<Eigen::Index, Eigen::Index> read_header(std::istream& in, const char* magic, const fs::path& path) {
  char m[4];
  if (!in.read(m, 4) || std::memcmp(m, magic, 4) != 0)
    throw IoError(path.string() + " is not a " + std::string(magic, 4) + " file");
  const auto rows = get_u32(in, path), cols = get_u32(in, path);
  if (rows == 0 || cols == 0 || static_cast<std::uint64_t>(rows) * cols > (1ull << 28))
    throw IoError("implausible raster size in " + path.string());
  return {rows, cols};
}

void write_f32(std::ostream& out, const Grid& g) {
  std::vector<char> buf(static_cast<std::size_t>(g.size()) * 4);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(g.data()[i]));
    for (int k = 0; k < 4; ++k) buf[static_cast<std::size_t>(4 * i + k)] = static_cast<char>((bits >> (8 * k)) & 0xff);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

Grid read_f32(std::istream& in, Eigen::Index rows, Eigen::Index cols, const fs::path& path) {
  Grid g(rows, cols);
  std::vector<unsigned char> buf(static_cast<std::size_t>(g.size()) * 4);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw IoError("truncated file: " + path.string());
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const auto* b = &buf[static_cast<std::size_t>(4 * i)];
    const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
                               static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
    g.data()[i] = std::bit_cast<float>(bits);
  }
  return g;
}

void expect_end(std::istream& in, const fs::path& path) {
  if (in.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes in " + path.string());
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

Grid read_tsky(const fs::path& path) {
  auto in = open_in(path);
  const auto [rows, cols] = read_header(in, "TSKY", path);
  Grid g = read_f32(in, rows, cols, path);
  expect_end(in, path);
  return g;
}

void write_tsky(const fs::path& path, const Grid& temps) {
  auto out = open_out(path);
  write_header(out, "TSKY", temps.rows(), temps.cols());
  write_f32(out, temps);
  finish(out, path);
}

MaskGrid read_tmsk(const fs::path& path) {
  auto in = open_in(path);
  const auto [rows, cols] = read_header(in, "TMSK", path);
  MaskGrid m(rows, cols);
  if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size())))
    throw IoError("truncated file: " + path.string());
  expect_end(in, path);
  if ((m > 1).any()) throw IoError("mask values must be 0 or 1 in " + path.string());
  return m;
}

void write_tmsk(const fs::path& path, const MaskGrid& mask) {
  auto out = open_out(path);
  write_header(out, "TMSK", mask.rows(), mask.cols());
  out.write(reinterpret_cast<const char*>(mask.data()), static_cast<std::streamsize>(mask.size()));
  finish(out, path);
}

FieldGrids read_tfld(const fs::path& path) {
  auto in = open_in(path);
  const auto [rows, cols] = read_header(in, "TFLD", path);
  FieldGrids f;
  f.u = read_f32(in, rows, cols, path);
  f.v = read_f32(in, rows, cols, path);
  f.phi = read_f32(in, rows, cols, path);
  f.psi = read_f32(in, rows, cols, path);
  expect_end(in, path);
  return f;
}

void write_tfld(const fs::path& path, const FieldGrids& g) {
  for (const Grid* x : {&g.v, &g.phi, &g.psi})
    if (x->rows() != g.u.rows() || x->cols() != g.u.cols()) throw InputError("field grids differ in size");
  auto out = open_out(path);
  write_header(out, "TFLD", g.u.rows(), g.u.cols());
  for (const Grid* x : {&g.u, &g.v, &g.phi, &g.psi}) write_f32(out, *x);
  finish(out, path);
}

PixelGeometry read_tgeo(const fs::path& path) {
  auto in = open_in(path);
  const auto [rows, cols] = read_header(in, "TGEO", path);
  PixelGeometry geom;
  geom.dx = read_f32(in, rows, cols, path);
  geom.dy = read_f32(in, rows, cols, path);
  expect_end(in, path);
  if (!(geom.dx > 0.0).all() || !(geom.dy > 0.0).all()) throw IoError("geometry cell sizes must be positive");
  return geom;
}

void write_tgeo(const fs::path& path, const PixelGeometry& geom) {
  auto out = open_out(path);
  write_header(out, "TGEO", geom.dx.rows(), geom.dx.cols());
  write_f32(out, geom.dx);
  write_f32(out, geom.dy);
  finish(out, path);
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("manifest is not valid JSON: " + std::string(e.what()));
  }
  if (!doc.is_array()) throw InputError("manifest must be a JSON array");
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  std::vector<ManifestEntry> out;
  for (const auto& rec : doc) {
    try {
      ManifestEntry e;
      e.frame_path = resolve(rec.at("frame_path").get<std::string>());
      e.timestamp = rec.at("timestamp").get<double>();
      e.sun_elevation_deg = rec.at("sun_elevation_deg").get<double>();
      e.sun_azimuth_deg = rec.at("sun_azimuth_deg").get<double>();
      e.air_temp_k = rec.at("air_temp_k").get<double>();
      if (rec.contains("mask_path") && !rec.at("mask_path").is_null())
        e.mask_path = resolve(rec.at("mask_path").get<std::string>());
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw InputError("manifest record " + std::to_string(out.size()) + ": " + ex.what());
    }
  }
  return out;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json rec{{"frame_path", e.frame_path.generic_string()},
                       {"timestamp", e.timestamp},
                       {"sun_elevation_deg", e.sun_elevation_deg},
                       {"sun_azimuth_deg", e.sun_azimuth_deg},
                       {"air_temp_k", e.air_temp_k}};
    if (e.mask_path) rec["mask_path"] = e.mask_path->generic_string();
    doc.push_back(std::move(rec));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

ThermalFrame load_frame(const ManifestEntry& entry, std::int64_t index) {
  FrameMeta meta;
  meta.frame_index = index;
  meta.timestamp = entry.timestamp;
  meta.sun_elevation = entry.sun_elevation_deg * std::numbers::pi / 180.0;
  meta.sun_azimuth = entry.sun_azimuth_deg * std::numbers::pi / 180.0;
  meta.air_temp = entry.air_temp_k;
  return ThermalFrame(read_tsky(entry.frame_path), meta);
}

CloudMask load_mask(const ManifestEntry& entry, Eigen::Index rows, Eigen::Index cols) {
  if (!entry.mask_path) return CloudMask::all(rows, cols, true);
  CloudMask m{read_tmsk(*entry.mask_path)};
  if (m.bits.rows() != rows || m.bits.cols() != cols)
    throw InputError("mask size does not match its frame: " + entry.mask_path->string());
  return m;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw InputError("line " + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second) throw InputError("duplicate key: " + key);
  }
  return kv;
}

KeyValues read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  return parse_key_values(in);
}

std::vector<double> parse_number_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (item.empty() || used != item.size()) throw InputError("not a number: '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw InputError("empty number list");
  return out;
}

}  // namespace skytrack

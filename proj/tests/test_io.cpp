#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "skytrack/io.hpp"

using namespace skytrack;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "skytrack_test_io";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<unsigned char> bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("TSKY layout is byte exact") {
  Grid g(2, 3);
  g << 1.0, 2.0, 3.0, 4.0, 5.0, 29350.0;
  const auto p = scratch("a.tsky");
  write_tsky(p, g);
  const auto b = bytes_of(p);
  REQUIRE(b.size() == 4 + 8 + 6 * 4);
  CHECK(std::string(b.begin(), b.begin() + 4) == "TSKY");
  CHECK(b[4] == 2);
  CHECK(b[5] == 0);
  CHECK(b[8] == 3);
  // 1.0f = 0x3f800000, little-endian.
  CHECK(b[12] == 0x00);
  CHECK(b[13] == 0x00);
  CHECK(b[14] == 0x80);
  CHECK(b[15] == 0x3f);
  const Grid back = read_tsky(p);
  CHECK((back == g).all());
}

TEST_CASE("TSKY rejects wrong magic and truncation") {
  const auto p = scratch("bad.tsky");
  {
    std::ofstream out(p, std::ios::binary);
    out << "TFLD";
  }
  CHECK_THROWS_AS(read_tsky(p), IoError);
  Grid g = Grid::Constant(3, 3, 30000.0);
  write_tsky(p, g);
  fs::resize_file(p, fs::file_size(p) - 1);
  CHECK_THROWS_AS(read_tsky(p), IoError);
  write_tsky(p, g);
  {
    std::ofstream out(p, std::ios::binary | std::ios::app);
    out << 'x';
  }
  CHECK_THROWS_AS(read_tsky(p), IoError);
  CHECK_THROWS_AS(read_tsky(scratch("missing.tsky")), IoError);
}

TEST_CASE("TMSK, TFLD and TGEO round trips") {
  MaskGrid m(2, 2);
  m << 0, 1, 1, 0;
  write_tmsk(scratch("m.tmsk"), m);
  CHECK((read_tmsk(scratch("m.tmsk")) == m).all());
  CHECK(bytes_of(scratch("m.tmsk")).size() == 12 + 4);

  FieldGrids f;
  f.u = Grid::Constant(3, 4, 1.5);
  f.v = Grid::Constant(3, 4, -2.0);
  f.phi = Grid::Zero(3, 4);
  f.psi = Grid::Constant(3, 4, 0.25);
  f.phi(2, 3) = 7.0;
  write_tfld(scratch("f.tfld"), f);
  CHECK(bytes_of(scratch("f.tfld")).size() == 12 + 4 * 12 * 4);
  const auto g = read_tfld(scratch("f.tfld"));
  CHECK((g.u == f.u).all());
  CHECK((g.v == f.v).all());
  CHECK((g.phi == f.phi).all());
  CHECK((g.psi == f.psi).all());
  f.psi = Grid::Zero(2, 2);
  CHECK_THROWS_AS(write_tfld(scratch("f2.tfld"), f), InputError);

  PixelGeometry geo{Grid::Constant(2, 3, 0.01), Grid::Constant(2, 3, 0.02), 1.0};
  write_tgeo(scratch("g.tgeo"), geo);
  const auto h = read_tgeo(scratch("g.tgeo"));
  CHECK(h.dx(1, 2) == doctest::Approx(0.01));
  CHECK(h.dy(0, 0) == doctest::Approx(0.02));
}

TEST_CASE("manifest round trip and relative paths") {
  const fs::path dir = scratch("manifest_dir");
  fs::create_directories(dir);
  std::vector<ManifestEntry> entries(2);
  entries[0].frame_path = "frame_000.tsky";
  entries[0].timestamp = 10.0;
  entries[0].mask_path = "mask_000.tmsk";
  entries[1].frame_path = "/abs/frame_001.tsky";
  entries[1].timestamp = 25.0;
  entries[1].sun_elevation_deg = 45.0;
  write_manifest(dir / "m.json", entries);
  const auto back = read_manifest(dir / "m.json");
  REQUIRE(back.size() == 2);
  CHECK(back[0].frame_path == dir / "frame_000.tsky");
  CHECK(back[0].mask_path.value() == dir / "mask_000.tmsk");
  CHECK(back[1].frame_path == fs::path("/abs/frame_001.tsky"));
  CHECK_FALSE(back[1].mask_path.has_value());
  CHECK(back[1].sun_elevation_deg == 45.0);

  std::ofstream(dir / "bad.json") << R"([{"frame_path": "x.tsky"}])";
  CHECK_THROWS_AS(read_manifest(dir / "bad.json"), InputError);
  std::ofstream(dir / "notjson.json") << "{";
  CHECK_THROWS_AS(read_manifest(dir / "notjson.json"), InputError);
}

TEST_CASE("load_frame converts degrees and masks default to all cloud") {
  const fs::path dir = scratch("frames");
  fs::create_directories(dir);
  write_tsky(dir / "f.tsky", Grid::Constant(4, 5, 29350.0));
  ManifestEntry e;
  e.frame_path = dir / "f.tsky";
  e.sun_elevation_deg = 30.0;
  e.air_temp_k = 301.0;
  const auto frame = load_frame(e, 3);
  CHECK(frame.meta().frame_index == 3);
  CHECK(frame.meta().sun_elevation == doctest::Approx(M_PI / 6));
  CHECK(frame.meta().air_temp == 301.0);
  CHECK(load_mask(e, 4, 5).count() == 20);
  MaskGrid m = MaskGrid::Zero(3, 3);
  write_tmsk(dir / "m.tmsk", m);
  e.mask_path = dir / "m.tmsk";
  CHECK_THROWS_AS(load_mask(e, 4, 5), InputError);
}

TEST_CASE("key = value parsing") {
  std::istringstream in("# comment\n  layers = 2 \n\nn_star=150 # trailing\nkernel = rbf\n");
  const auto kv = parse_key_values(in);
  CHECK(kv.size() == 3);
  CHECK(kv.at("layers") == "2");
  CHECK(kv.at("n_star") == "150");
  CHECK(kv.at("kernel") == "rbf");
  std::istringstream dup("a=1\na=2\n");
  CHECK_THROWS_AS(parse_key_values(dup), InputError);
  std::istringstream bare("justakey\n");
  CHECK_THROWS_AS(parse_key_values(bare), InputError);

  const auto nums = parse_number_list("1, 2.5,1e3");
  REQUIRE(nums.size() == 3);
  CHECK(nums[2] == 1000.0);
  CHECK_THROWS_AS(parse_number_list("1,,2"), InputError);
  CHECK_THROWS_AS(parse_number_list("1x"), InputError);
}

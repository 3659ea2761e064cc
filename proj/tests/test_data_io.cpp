#include <cmath>
#include <cstring>
#include <functional>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "otmel/data_io.hpp"
#include "otmel/matching.hpp"
#include "test_util.hpp"

using namespace otmel;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void spit_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::config;
}

}  // namespace

TEST_CASE("feature file layout") {
  Matrix m = Matrix::from_rows({{1.0, -2.0}, {0.5, 3.25}, {0.0, 1e-3}});
  auto bytes = encode_feature_matrix(m);
  REQUIRE(bytes.size() == 16 + 6 * 4);
  CHECK(std::memcmp(bytes.data(), "OTML", 4) == 0);
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == 3);
  CHECK(bytes[12] == 2);
  float f;
  std::memcpy(&f, bytes.data() + 16 + 4, 4);
  CHECK(f == -2.0f);
  CHECK(decode_feature_matrix(bytes) == round_to_float(m));
}

TEST_CASE("feature file round trip") {
  test::TempDir dir;
  Rng rng(1);
  Matrix m = round_to_float(test::gaussian_matrix(rng, 3, 4));
  write_feature_file(m, dir.path() / "a.otml");
  Matrix back = read_feature_file(dir.path() / "a.otml");
  CHECK(back == m);
  write_feature_file(back, dir.path() / "b.otml");
  CHECK(slurp(dir.path() / "a.otml") == slurp(dir.path() / "b.otml"));
}

TEST_CASE("malformed feature files") {
  test::TempDir dir;
  auto good = encode_feature_matrix(Matrix(2, 2, 1.0));

  auto bad_magic = good;
  std::memcpy(bad_magic.data(), "XXXX", 4);
  spit(dir.path() / "magic.otml", bad_magic);
  CHECK(kind_of([&] { read_feature_file(dir.path() / "magic.otml"); }) == ErrorKind::bad_magic);

  auto short_payload = good;
  short_payload.resize(good.size() - 3);
  CHECK(kind_of([&] { decode_feature_matrix(short_payload); }) == ErrorKind::truncated);

  auto short_header = good;
  short_header.resize(10);
  CHECK(kind_of([&] { decode_feature_matrix(short_header); }) == ErrorKind::truncated);

  auto version = good;
  version[4] = 2;
  CHECK(kind_of([&] { decode_feature_matrix(version); }) == ErrorKind::version);

  auto trailing = good;
  trailing.push_back(0);
  CHECK(kind_of([&] { decode_feature_matrix(trailing); }) == ErrorKind::parse);

  auto nan = good;
  const float q = std::nanf("");
  std::memcpy(nan.data() + 16, &q, 4);
  CHECK(kind_of([&] { decode_feature_matrix(nan); }) == ErrorKind::non_finite);

  Matrix inf(1, 1, INFINITY);
  CHECK(kind_of([&] { encode_feature_matrix(inf); }) == ErrorKind::non_finite);
  CHECK(kind_of([&] { read_feature_file(dir.path() / "missing.otml"); }) == ErrorKind::io);
}

TEST_CASE("manifest loading") {
  test::TempDir dir;
  fs::create_directories(dir.path() / "f");
  Rng rng(2);
  auto put = [&](const std::string& name, std::size_t rows, std::size_t d) {
    write_feature_file(test::gaussian_matrix(rng, rows, d), dir.path() / "f" / name);
  };
  put("e1t", 3, 4), put("e1v", 2, 4), put("e2t", 3, 4), put("e2v", 2, 4);
  put("m1t", 3, 4), put("m1v", 2, 4), put("wide", 2, 6);

  nlohmann::json doc = {
      {"schema_version", 1},
      {"format_version", 1},
      {"d", 4},
      {"entities",
       {{{"id", "E1"}, {"text_path", "f/e1t"}, {"visual_path", "f/e1v"}},
        {{"id", "E2"}, {"text_path", "f/e2t"}, {"visual_path", "f/e2v"}}}},
      {"mentions",
       {{{"id", "M1"}, {"text_path", "f/m1t"}, {"visual_path", "f/m1v"}, {"gold_entity", "E2"}}}}};
  const fs::path path = dir.path() / "manifest.json";

  SUBCASE("consistent") {
    spit_text(path, doc.dump());
    Dataset ds = load_manifest(path);
    CHECK(ds.entities.size() == 2);
    CHECK(ds.mentions.size() == 1);
    CHECK(ds.d == 4);
    CHECK(*ds.mentions[0].gold_entity == "E2");
  }
  SUBCASE("unresolved gold names both ids") {
    doc["mentions"][0]["gold_entity"] = "E9";
    spit_text(path, doc.dump());
    try {
      load_manifest(path);
      FAIL("expected unresolved id");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::unresolved_id);
      const std::string what = e.what();
      CHECK(what.find("M1") != std::string::npos);
      CHECK(what.find("E9") != std::string::npos);
    }
  }
  SUBCASE("mixed widths") {
    doc["entities"][1]["visual_path"] = "f/wide";
    spit_text(path, doc.dump());
    CHECK(kind_of([&] { load_manifest(path); }) == ErrorKind::dimension_drift);
  }
  SUBCASE("duplicate ids") {
    doc["entities"][1]["id"] = "E1";
    doc["mentions"][0]["gold_entity"] = "E1";
    spit_text(path, doc.dump());
    CHECK(kind_of([&] { load_manifest(path); }) == ErrorKind::duplicate_id);
  }
  SUBCASE("missing file") {
    doc["entities"][0]["text_path"] = "f/none";
    spit_text(path, doc.dump());
    CHECK(kind_of([&] { load_manifest(path); }) == ErrorKind::io);
  }
  SUBCASE("schema problems") {
    doc["schema_version"] = 7;
    spit_text(path, doc.dump());
    CHECK(kind_of([&] { load_manifest(path); }) == ErrorKind::version);
    spit_text(path, "{ not json");
    CHECK(kind_of([&] { load_manifest(path); }) == ErrorKind::parse);
  }
}

TEST_CASE("dataset write and reload") {
  test::TempDir dir;
  FixtureSpec spec;
  spec.seed = 3;
  spec.d = 5;
  spec.n_entities = 3;
  spec.n_mentions = 2;
  spec.noise_sigma = 0.2;
  Fixture fx = make_fixture(spec);
  Dataset back = load_manifest(write_dataset(fx.dataset, dir.path()));
  REQUIRE(back.entities.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.entities[i].id == fx.dataset.entities[i].id);
    CHECK(back.entities[i].text == fx.dataset.entities[i].text);
    CHECK(back.entities[i].visual == fx.dataset.entities[i].visual);
  }
  CHECK(back.mentions[1].gold_entity == fx.dataset.mentions[1].gold_entity);
  CHECK(back.mentions[1].text == fx.dataset.mentions[1].text);
}

TEST_CASE("fixture generation") {
  SUBCASE("deterministic per seed") {
    test::TempDir a, b;
    FixtureSpec spec;
    spec.seed = 11;
    spec.noise_sigma = 0.3;
    generate_fixtures(spec, a.path());
    generate_fixtures(spec, b.path());
    std::size_t files = 0;
    for (const auto& entry : fs::recursive_directory_iterator(a.path())) {
      if (!entry.is_regular_file()) continue;
      ++files;
      const fs::path rel = fs::relative(entry.path(), a.path());
      CHECK(slurp(entry.path()) == slurp(b.path() / rel));
    }
    CHECK(files == 2 + 2 * (spec.n_entities + spec.n_mentions));
    spec.seed = 12;
    CHECK_FALSE(make_fixture(spec).dataset.entities[0].text ==
                make_fixture(FixtureSpec{.seed = 11, .noise_sigma = 0.3}).dataset.entities[0].text);
  }
  SUBCASE("twenty entities") {
    test::TempDir dir;
    FixtureSpec spec;
    spec.n_entities = 20;
    spec.n_mentions = 3;
    spec.d = 4;
    const fs::path manifest = generate_fixtures(spec, dir.path());
    Dataset ds = load_manifest(manifest);
    CHECK(ds.entities.size() == 20);
    std::size_t feature_files = 0;
    for (const auto& e : fs::directory_iterator(dir.path() / "features")) feature_files += e.is_regular_file();
    CHECK(feature_files == 40 + 6);
  }
  SUBCASE("noiseless gold beats the imposter") {
    FixtureSpec spec;
    spec.seed = 21;
    spec.n_entities = 2;
    spec.n_mentions = 1;
    Fixture fx = make_fixture(spec);
    Scorer scorer(ProjectionTable::identity(spec.d), {});
    const auto& m = fx.dataset.mentions[0];
    REQUIRE(*m.gold_entity == "E0000");
    CHECK(scorer.overall_score(m, fx.dataset.entities[0]).s_o >
          scorer.overall_score(m, fx.dataset.entities[1]).s_o);
  }
  SUBCASE("planted structure") {
    FixtureSpec spec;
    spec.text_len = 6;
    spec.visual_len = 3;
    auto map = spec.resolved_correspondence();
    CHECK(map == std::vector<std::size_t>{0, 1, 2, 1, 2, 1});
    Fixture fx = make_fixture(spec);
    const auto& e = fx.dataset.entities[0];
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t c = 0; c < spec.d; ++c) CHECK(e.text(i, c) == e.visual(map[i], c));
  }
  SUBCASE("spec validation") {
    CHECK(kind_of([] { parse_fixture_spec(R"({"d": 0})"); }) == ErrorKind::config);
    CHECK(kind_of([] { parse_fixture_spec(R"({"text_len": 2, "correspondence": [0]})"); }) ==
          ErrorKind::config);
    CHECK(kind_of([] { parse_fixture_spec(R"({"d": "x"})"); }) == ErrorKind::parse);
    FixtureSpec s = parse_fixture_spec(R"({"seed": 5, "noise_sigma": 0.5, "n_entities": 20})");
    CHECK(s.seed == 5);
    CHECK(s.noise_sigma == 0.5);
    CHECK(s.n_entities == 20);
  }
}

TEST_CASE("projection tables round trip through float") {
  test::TempDir dir;
  auto table = ProjectionTable::random_orthogonal(5, 4);
  save_projections(table, dir.path());
  ProjectionTable back = load_projections(dir.path() / "projections.json");
  for (Site s : kAllSites) {
    CHECK(back.at(s).site == s);
    CHECK(back.at(s).w_q == round_to_float(table.at(s).w_q));
    CHECK(back.at(s).w_h == round_to_float(table.at(s).w_h));
  }
}

TEST_CASE("csv matrices") {
  std::istringstream ok("# comment\n1,2.5,-3\n\n4, 5 ,6e-2\n");
  Matrix m = read_csv_matrix(ok);
  CHECK(m == Matrix::from_rows({{1, 2.5, -3}, {4, 5, 6e-2}}));

  std::ostringstream out;
  Rng rng(5);
  Matrix r = test::gaussian_matrix(rng, 3, 3);
  write_csv_matrix(out, r);
  std::istringstream in(out.str());
  CHECK(read_csv_matrix(in) == r);

  std::istringstream bad("1,2\n3,x\n");
  try {
    read_csv_matrix(bad, "cost.csv");
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::parse);
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
  std::istringstream ragged("1,2\n3\n");
  CHECK(kind_of([&] { read_csv_matrix(ragged); }) == ErrorKind::parse);
  CHECK(format_double(0.1) == "0.1");
}

#include "otmel/data_io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "json.hpp"

#include "otmel/rng.hpp"

namespace otmel {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::uint8_t kMagic[4] = {'O', 'T', 'M', 'L'};
constexpr std::size_t kHeaderBytes = 16;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::vector<std::uint8_t>& bytes, const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::io, "short write to '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const std::string& text, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "cannot write '" + path.string() + "'");
  out << text;
}

}  // namespace

std::vector<std::uint8_t> encode_feature_matrix(const Matrix& m) {
  if (m.rows() > UINT32_MAX || m.cols() > UINT32_MAX)
    throw Error(ErrorKind::dimension, "matrix too large for the feature format");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.reserve(kHeaderBytes + 4 * m.size());
  put_u32(out, kFeatureFileVersion);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (std::size_t i = 0; i < m.size(); ++i) {
    const float f = static_cast<float>(m.values()[i]);
    if (!std::isfinite(f)) {
      std::ostringstream os;
      os << "value at (" << i / m.cols() << "," << i % m.cols() << ") is not finite in binary32";
      throw Error(ErrorKind::non_finite, os.str());
    }
    put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

Matrix decode_feature_matrix(const std::vector<std::uint8_t>& bytes, const std::string& label) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin()))
    throw Error(ErrorKind::bad_magic, label + ": not a feature file (bad magic)");
  if (bytes.size() < kHeaderBytes)
    throw Error(ErrorKind::truncated, label + ": header truncated");
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kFeatureFileVersion)
    throw Error(ErrorKind::version,
                label + ": unsupported feature file version " + std::to_string(version));
  const std::uint64_t rows = get_u32(bytes.data() + 8);
  const std::uint64_t cols = get_u32(bytes.data() + 12);
  const std::uint64_t need = kHeaderBytes + 4 * rows * cols;
  if (bytes.size() < need) {
    std::ostringstream os;
    os << label << ": header promises " << rows << "x" << cols << " values but payload holds "
       << (bytes.size() - kHeaderBytes) / 4;
    throw Error(ErrorKind::truncated, os.str());
  }
  if (bytes.size() > need)
    throw Error(ErrorKind::parse, label + ": trailing bytes after payload");
  Matrix m(rows, cols);
  const std::uint8_t* p = bytes.data() + kHeaderBytes;
  for (std::size_t i = 0; i < m.size(); ++i, p += 4) {
    const float f = std::bit_cast<float>(get_u32(p));
    if (!std::isfinite(f)) {
      std::ostringstream os;
      os << label << ": non-finite value at (" << i / cols << "," << i % cols << ")";
      throw Error(ErrorKind::non_finite, os.str());
    }
    m.values()[i] = f;
  }
  return m;
}

Matrix read_feature_file(const fs::path& path) {
  return decode_feature_matrix(read_bytes(path), path.string());
}

void write_feature_file(const Matrix& m, const fs::path& path) {
  write_bytes(encode_feature_matrix(m), path);
}

Matrix round_to_float(const Matrix& m) {
  Matrix out = m;
  for (double& v : out.values()) v = static_cast<float>(v);
  return out;
}

// ---------------------------------------------------------------- manifest

namespace {

std::string get_string(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key) || !obj[key].is_string())
    throw Error(ErrorKind::parse, where + ": missing string field '" + key + "'");
  return obj[key].get<std::string>();
}

json parse_json(const std::string& text, const std::string& where) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::parse, where + ": " + e.what());
  }
}

void check_schema(const json& doc, const std::string& where) {
  if (!doc.is_object()) throw Error(ErrorKind::parse, where + ": expected a JSON object");
  if (!doc.contains("schema_version") || !doc["schema_version"].is_number_integer())
    throw Error(ErrorKind::parse, where + ": missing schema_version");
  if (doc["schema_version"].get<int>() != kManifestSchemaVersion)
    throw Error(ErrorKind::version, where + ": unsupported schema_version " +
                                        doc["schema_version"].dump());
}

Matrix load_checked(const fs::path& base, const std::string& rel, std::size_t d,
                    const std::string& id) {
  const fs::path p = base / rel;
  if (!fs::exists(p)) throw Error(ErrorKind::io, "record '" + id + "': missing file " + p.string());
  Matrix m = read_feature_file(p);
  if (m.cols() != d) {
    std::ostringstream os;
    os << "record '" << id << "': " << p.string() << " has d=" << m.cols() << " but manifest d="
       << d;
    throw Error(ErrorKind::dimension_drift, os.str());
  }
  return m;
}

void raise_findings(const std::vector<Finding>& findings, const std::string& id) {
  if (findings.empty()) return;
  ErrorKind kind = ErrorKind::parse;
  if (findings.front().kind == FindingKind::dimension_mismatch) kind = ErrorKind::dimension_drift;
  if (findings.front().kind == FindingKind::non_finite) kind = ErrorKind::non_finite;
  throw Error(kind, "record '" + id + "': " + findings.front().message);
}

}  // namespace

Dataset load_manifest(const fs::path& path) {
  const std::string where = path.string();
  const json doc = parse_json(read_text(path), where);
  check_schema(doc, where);
  if (!doc.contains("d") || !doc["d"].is_number_unsigned() || doc["d"].get<std::size_t>() == 0)
    throw Error(ErrorKind::parse, where + ": missing positive integer field 'd'");
  const fs::path base = path.parent_path();

  Dataset ds;
  ds.d = doc["d"].get<std::size_t>();
  const json entities = doc.value("entities", json::array());
  const json mentions = doc.value("mentions", json::array());
  if (!entities.is_array() || !mentions.is_array())
    throw Error(ErrorKind::parse, where + ": 'entities' and 'mentions' must be arrays");

  std::set<std::string> entity_ids;
  for (const auto& e : entities) {
    EntityRecord r;
    r.id = get_string(e, "id", where);
    if (!entity_ids.insert(r.id).second)
      throw Error(ErrorKind::duplicate_id, where + ": duplicate entity id '" + r.id + "'");
    r.text = load_checked(base, get_string(e, "text_path", where), ds.d, r.id);
    r.visual = load_checked(base, get_string(e, "visual_path", where), ds.d, r.id);
    raise_findings(validate_record(r), r.id);
    ds.entities.push_back(std::move(r));
  }
  std::set<std::string> mention_ids;
  for (const auto& m : mentions) {
    MentionRecord r;
    r.id = get_string(m, "id", where);
    if (!mention_ids.insert(r.id).second)
      throw Error(ErrorKind::duplicate_id, where + ": duplicate mention id '" + r.id + "'");
    if (m.contains("gold_entity") && !m["gold_entity"].is_null()) {
      r.gold_entity = get_string(m, "gold_entity", where);
      if (!entity_ids.count(*r.gold_entity))
        throw Error(ErrorKind::unresolved_id, where + ": mention '" + r.id +
                                                  "' names gold entity '" + *r.gold_entity +
                                                  "' which is not in the manifest");
    }
    r.text = load_checked(base, get_string(m, "text_path", where), ds.d, r.id);
    r.visual = load_checked(base, get_string(m, "visual_path", where), ds.d, r.id);
    raise_findings(validate_record(r), r.id);
    ds.mentions.push_back(std::move(r));
  }
  return ds;
}

fs::path write_dataset(const Dataset& ds, const fs::path& out_dir) {
  fs::create_directories(out_dir / "features");
  json doc;
  doc["schema_version"] = kManifestSchemaVersion;
  doc["format_version"] = kFeatureFileVersion;
  doc["d"] = ds.d;
  doc["entities"] = json::array();
  doc["mentions"] = json::array();
  auto emit = [&](const std::string& id, const Matrix& text, const Matrix& visual) {
    const std::string t = "features/" + id + ".text.otml";
    const std::string v = "features/" + id + ".visual.otml";
    write_feature_file(text, out_dir / t);
    write_feature_file(visual, out_dir / v);
    return json{{"id", id}, {"text_path", t}, {"visual_path", v}};
  };
  for (const auto& e : ds.entities) doc["entities"].push_back(emit(e.id, e.text, e.visual));
  for (const auto& m : ds.mentions) {
    json j = emit(m.id, m.text, m.visual);
    if (m.gold_entity) j["gold_entity"] = *m.gold_entity;
    doc["mentions"].push_back(std::move(j));
  }
  const fs::path manifest = out_dir / "manifest.json";
  write_text(doc.dump(2) + "\n", manifest);
  return manifest;
}

// ------------------------------------------------------------- projections

void save_projections(const ProjectionTable& table, const fs::path& dir) {
  fs::create_directories(dir);
  json doc;
  doc["schema_version"] = kManifestSchemaVersion;
  doc["d"] = table.dim();
  doc["sites"] = json::object();
  for (Site s : kAllSites) {
    const std::string name(site_name(s));
    const ProjectionSet& p = table.at(s);
    json entry;
    for (auto [key, m] : {std::pair{"w_q", &p.w_q}, {"w_k", &p.w_k}, {"w_h", &p.w_h}}) {
      const std::string file = name + "." + key + ".otml";
      write_feature_file(*m, dir / file);
      entry[key] = file;
    }
    doc["sites"][name] = std::move(entry);
  }
  write_text(doc.dump(2) + "\n", dir / "projections.json");
}

ProjectionTable load_projections(const fs::path& index_path) {
  const std::string where = index_path.string();
  const json doc = parse_json(read_text(index_path), where);
  check_schema(doc, where);
  if (!doc.contains("sites") || !doc["sites"].is_object())
    throw Error(ErrorKind::parse, where + ": missing 'sites' object");
  const fs::path base = index_path.parent_path();
  std::array<ProjectionSet, kSiteCount> sets;
  for (std::size_t i = 0; i < kSiteCount; ++i) {
    const std::string name(site_name(kAllSites[i]));
    if (!doc["sites"].contains(name))
      throw Error(ErrorKind::parse, where + ": missing site '" + name + "'");
    const json& entry = doc["sites"][name];
    sets[i].site = kAllSites[i];
    sets[i].w_q = read_feature_file(base / get_string(entry, "w_q", where));
    sets[i].w_k = read_feature_file(base / get_string(entry, "w_k", where));
    sets[i].w_h = read_feature_file(base / get_string(entry, "w_h", where));
  }
  return ProjectionTable(std::move(sets));
}

// ---------------------------------------------------------------- fixtures

void FixtureSpec::check() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::config, "fixture spec: " + what); };
  if (d == 0) fail("d must be >= 1");
  if (text_len == 0 || visual_len == 0) fail("sequence lengths must be >= 1");
  if (n_entities == 0) fail("n_entities must be >= 1");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) fail("noise_sigma must be >= 0");
  if (!std::isfinite(identity_weight)) fail("identity_weight must be finite");
  if (!correspondence.empty()) {
    if (correspondence.size() != text_len) fail("correspondence length must equal text_len");
    for (std::size_t v : correspondence)
      if (v >= visual_len) fail("correspondence entry out of range");
  }
}

std::vector<std::size_t> FixtureSpec::resolved_correspondence() const {
  if (!correspondence.empty()) return correspondence;
  std::vector<std::size_t> map(text_len, 0);
  if (visual_len > 1)
    for (std::size_t i = 1; i < text_len; ++i) map[i] = 1 + (i - 1) % (visual_len - 1);
  return map;
}

FixtureSpec parse_fixture_spec(const std::string& json_text) {
  const json doc = parse_json(json_text, "fixture spec");
  if (!doc.is_object()) throw Error(ErrorKind::parse, "fixture spec: expected a JSON object");
  FixtureSpec s;
  try {
    s.seed = doc.value("seed", s.seed);
    s.d = doc.value("d", s.d);
    s.n_entities = doc.value("n_entities", s.n_entities);
    s.n_mentions = doc.value("n_mentions", s.n_mentions);
    s.text_len = doc.value("text_len", s.text_len);
    s.visual_len = doc.value("visual_len", s.visual_len);
    s.noise_sigma = doc.value("noise_sigma", s.noise_sigma);
    s.identity_weight = doc.value("identity_weight", s.identity_weight);
    s.correspondence = doc.value("correspondence", s.correspondence);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::parse, std::string("fixture spec: ") + e.what());
  }
  s.check();
  return s;
}

FixtureSpec read_fixture_spec(const fs::path& path) { return parse_fixture_spec(read_text(path)); }

namespace {

std::string record_id(char prefix, std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%c%04zu", prefix, i);
  return buf;
}

Matrix with_noise(const Matrix& base, double sigma, Rng& rng) {
  Matrix m = base;
  for (double& v : m.values()) v += sigma * rng.normal();
  return round_to_float(m);
}

}  // namespace

Fixture make_fixture(const FixtureSpec& spec) {
  spec.check();
  const auto map = spec.resolved_correspondence();
  Rng rng(spec.seed);
  Fixture fx;
  fx.dataset.d = spec.d;

  std::vector<Matrix> base_text;
  std::vector<Matrix> base_visual;
  for (std::size_t e = 0; e < spec.n_entities; ++e) {
    std::vector<double> identity(spec.d);
    for (double& v : identity) v = rng.normal();
    Matrix visual(spec.visual_len, spec.d);
    for (std::size_t c = 0; c < spec.d; ++c) visual(0, c) = identity[c];
    for (std::size_t k = 1; k < spec.visual_len; ++k)
      for (std::size_t c = 0; c < spec.d; ++c)
        visual(k, c) = rng.normal() + spec.identity_weight * identity[c];
    Matrix text(spec.text_len, spec.d);
    for (std::size_t i = 0; i < spec.text_len; ++i)
      for (std::size_t c = 0; c < spec.d; ++c) text(i, c) = visual(map[i], c);

    EntityRecord rec;
    rec.id = record_id('E', e);
    rec.text = with_noise(text, spec.noise_sigma, rng);
    rec.visual = with_noise(visual, spec.noise_sigma, rng);
    fx.truth.ids.push_back(rec.id);
    fx.truth.text_to_visual.push_back(map);
    fx.dataset.entities.push_back(std::move(rec));
    base_text.push_back(std::move(text));
    base_visual.push_back(std::move(visual));
  }
  for (std::size_t i = 0; i < spec.n_mentions; ++i) {
    const std::size_t gold = i % spec.n_entities;
    MentionRecord rec;
    rec.id = record_id('M', i);
    rec.text = with_noise(base_text[gold], spec.noise_sigma, rng);
    rec.visual = with_noise(base_visual[gold], spec.noise_sigma, rng);
    rec.gold_entity = fx.dataset.entities[gold].id;
    fx.truth.ids.push_back(rec.id);
    fx.truth.text_to_visual.push_back(map);
    fx.dataset.mentions.push_back(std::move(rec));
  }
  return fx;
}

fs::path generate_fixtures(const FixtureSpec& spec, const fs::path& out_dir) {
  const Fixture fx = make_fixture(spec);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create '" + out_dir.string() + "': " + ec.message());
  const fs::path manifest = write_dataset(fx.dataset, out_dir);
  json truth;
  truth["schema_version"] = kManifestSchemaVersion;
  truth["records"] = json::array();
  for (std::size_t i = 0; i < fx.truth.ids.size(); ++i)
    truth["records"].push_back({{"id", fx.truth.ids[i]}, {"text_to_visual", fx.truth.text_to_visual[i]}});
  write_text(truth.dump(2) + "\n", out_dir / "truth.json");
  return manifest;
}

// --------------------------------------------------------------------- csv

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

Matrix read_csv_matrix(std::istream& in, const std::string& label) {
  std::vector<double> values;
  std::size_t cols = 0;
  std::size_t rows = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::size_t count = 0;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      std::string_view cell(line.data() + pos, (comma == std::string::npos ? line.size() : comma) - pos);
      while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
      while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t')) cell.remove_suffix(1);
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
        std::ostringstream os;
        os << label << ":" << lineno << ": cannot parse '" << cell << "' as a number";
        throw Error(ErrorKind::parse, os.str());
      }
      if (!std::isfinite(v)) {
        std::ostringstream os;
        os << label << ":" << lineno << ": non-finite value";
        throw Error(ErrorKind::non_finite, os.str());
      }
      values.push_back(v);
      ++count;
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (rows == 0) cols = count;
    if (count != cols) {
      std::ostringstream os;
      os << label << ":" << lineno << ": expected " << cols << " values, found " << count;
      throw Error(ErrorKind::parse, os.str());
    }
    ++rows;
  }
  if (rows == 0) throw Error(ErrorKind::parse, label + ": no data rows");
  return Matrix(rows, cols, std::move(values));
}

Matrix read_csv_matrix(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  return read_csv_matrix(in, path.string());
}

void write_csv_matrix(std::ostream& out, const Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

}  // namespace otmel

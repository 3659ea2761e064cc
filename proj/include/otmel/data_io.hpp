#pragma once

// On-disk formats. See docs/formats.md for the normative description.
//
// Feature file (.otml), little-endian:
//   bytes 0..3   magic "OTML"
//   bytes 4..7   u32 version = 1
//   bytes 8..11  u32 rows
//   bytes 12..15 u32 cols
//   then rows*cols IEEE-754 binary32 values, row-major
//
// Values are widened to double on read; writing narrows to float.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "otmel/core_types.hpp"

namespace otmel {

inline constexpr std::uint32_t kFeatureFileVersion = 1;
inline constexpr int kManifestSchemaVersion = 1;

std::vector<std::uint8_t> encode_feature_matrix(const Matrix& m);
Matrix decode_feature_matrix(const std::vector<std::uint8_t>& bytes,
                             const std::string& label = "<memory>");

Matrix read_feature_file(const std::filesystem::path& path);
void write_feature_file(const Matrix& m, const std::filesystem::path& path);

// Every value rounded through binary32, i.e. what a write/read cycle yields.
Matrix round_to_float(const Matrix& m);

struct Dataset {
  std::size_t d = 0;
  std::vector<EntityRecord> entities;
  std::vector<MentionRecord> mentions;
};

// Loads and validates eagerly. Paths in the manifest resolve relative to
// the manifest's directory.
Dataset load_manifest(const std::filesystem::path& path);

// Writes every record's feature files under out_dir/features and a
// manifest at out_dir/manifest.json. Returns the manifest path.
std::filesystem::path write_dataset(const Dataset& ds, const std::filesystem::path& out_dir);

// Projection tables: one feature file per matrix plus a small JSON index.
void save_projections(const ProjectionTable& table, const std::filesystem::path& dir);
ProjectionTable load_projections(const std::filesystem::path& index_path);

struct FixtureSpec {
  std::uint64_t seed = 0;
  std::size_t d = 16;
  std::size_t n_entities = 4;
  std::size_t n_mentions = 4;
  std::size_t text_len = 8;
  std::size_t visual_len = 4;
  double noise_sigma = 0.0;
  // Weight of the identity vector mixed into every non-summary row.
  double identity_weight = 0.5;
  // text row -> visual row; empty selects the default round-robin map.
  std::vector<std::size_t> correspondence;

  void check() const;
  std::vector<std::size_t> resolved_correspondence() const;
};

FixtureSpec parse_fixture_spec(const std::string& json_text);
FixtureSpec read_fixture_spec(const std::filesystem::path& path);

// Planted text-row -> visual-row map of every record, by record id.
struct FixtureTruth {
  std::vector<std::string> ids;
  std::vector<std::vector<std::size_t>> text_to_visual;
};

struct Fixture {
  Dataset dataset;
  FixtureTruth truth;
};

// In-memory generation; values are already rounded to binary32 so that the
// result equals what generate_fixtures() writes and load_manifest() reads.
Fixture make_fixture(const FixtureSpec& spec);

// Writes manifest.json, truth.json and features/ under out_dir.
std::filesystem::path generate_fixtures(const FixtureSpec& spec,
                                        const std::filesystem::path& out_dir);

// CSV matrices: one row per line, comma separated. Blank lines and lines
// starting with '#' are skipped. Errors name the offending line.
Matrix read_csv_matrix(std::istream& in, const std::string& label = "<csv>");
Matrix read_csv_matrix(const std::filesystem::path& path);
void write_csv_matrix(std::ostream& out, const Matrix& m);

// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace otmel

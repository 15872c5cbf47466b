#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace histgen {

// One WSI as a bag of patch feature vectors (rows), float32 on disk and in
// memory; the model promotes to double at its input projection.
struct PatchFeatureBag {
  std::string wsi_id;
  Eigen::MatrixXf features;                       // n x d_in
  std::vector<std::array<std::int32_t, 2>> coords;  // optional, one pair per patch

  Eigen::Index n() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
};

struct ReportRecord {
  std::string wsi_id;
  std::string text;
};

enum class Split { Train, Val, Test };

std::string split_name(Split s);
Split split_from_name(const std::string& name);

struct ManifestEntry {
  std::string wsi_id;
  std::string feature_file;
  std::string report;
  std::optional<int> label;        // class id for subtyping tasks
  std::optional<double> time;      // survival time
  std::optional<bool> censored;    // survival censor flag
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::map<std::string, Split> split_assignment;

  std::vector<const ManifestEntry*> in_split(Split s) const;
  const ManifestEntry* find(const std::string& wsi_id) const;
};

// .hgfeat binary feature file, little-endian, float32 payload.
void write_feature_bag(const std::string& path, const PatchFeatureBag& bag);
PatchFeatureBag load_feature_bag(const std::string& path);

void save_manifest(const std::string& path, const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::string& path);

// Checks that every referenced feature file exists and parses.
void validate_manifest(const DatasetManifest& manifest, const std::string& base_dir);

void save_report_corpus(const std::string& path, const std::vector<ReportRecord>& reports);
std::vector<ReportRecord> load_report_corpus(const std::string& path);

// Largest-remainder assignment over a seeded shuffle; splits are disjoint and
// cover the input.
DatasetManifest split_dataset(const DatasetManifest& manifest,
                              const std::array<double, 3>& ratios, std::uint64_t seed);

struct SyntheticTheme {
  Eigen::VectorXf center;  // d_in
  std::string phrase;
};

struct SyntheticSpec {
  int num_wsis = 20;
  int n_min = 24;
  int n_max = 64;
  int d_in = 1024;
  std::vector<SyntheticTheme> themes;
  double noise_scale = 0.25;
  int max_themes_per_wsi = 3;  // 1 = pure bags (fully separable transfer tasks)
  std::uint64_t seed = 0;

  void validate() const;
};

// Builds K well-separated theme centers plus phrase templates from a fixed
// closed vocabulary.
SyntheticSpec default_synthetic_spec(int num_wsis, int k_themes, int d_in, int n_min, int n_max,
                                     double noise_scale, std::uint64_t seed,
                                     int max_themes_per_wsi = 3);

struct SyntheticCorpus {
  std::vector<PatchFeatureBag> bags;
  std::vector<ReportRecord> reports;
  std::vector<int> primary_theme;          // per WSI
  std::vector<double> survival_time;       // planted: theme k lands in time quartile k
  std::vector<bool> survival_censored;
};

// Each WSI draws 1-3 themes; patches cluster around the chosen centers with
// isotropic noise; the report concatenates the chosen phrases, primary first.
SyntheticCorpus synth_generate(const SyntheticSpec& spec);

// Writes feature files + reports.json + manifest.json (with split, labels and
// survival fields) under out_dir. Returns the manifest path.
std::string write_synthetic_dataset(const SyntheticCorpus& corpus, const std::string& out_dir,
                                    const std::array<double, 3>& ratios, std::uint64_t seed);

}  // namespace histgen

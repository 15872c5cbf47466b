#include "histgen/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "histgen/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "feature file I/O assumes a little-endian host");

namespace histgen {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr char kFeatMagic[4] = {'H', 'G', 'F', 'T'};
constexpr std::uint32_t kFeatVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error(path + ": truncated file while reading " + what);
  return v;
}

}  // namespace

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  throw std::logic_error("split_name: bad split");
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw std::runtime_error("unknown split name '" + name + "'");
}

std::vector<const ManifestEntry*> DatasetManifest::in_split(Split s) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    auto it = split_assignment.find(e.wsi_id);
    if (it != split_assignment.end() && it->second == s) out.push_back(&e);
  }
  return out;
}

const ManifestEntry* DatasetManifest::find(const std::string& wsi_id) const {
  for (const auto& e : entries)
    if (e.wsi_id == wsi_id) return &e;
  return nullptr;
}

void write_feature_bag(const std::string& path, const PatchFeatureBag& bag) {
  if (bag.n() < 1) throw std::runtime_error(path + ": refusing to write an empty bag");
  if (!bag.coords.empty() && static_cast<Eigen::Index>(bag.coords.size()) != bag.n())
    throw std::runtime_error(path + ": coords count does not match patch count");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out.write(kFeatMagic, 4);
  write_pod(out, kFeatVersion);
  write_pod(out, static_cast<std::uint64_t>(bag.n()));
  write_pod(out, static_cast<std::uint64_t>(bag.dim()));
  write_pod(out, kDtypeF32);
  write_pod(out, static_cast<std::uint8_t>(bag.coords.empty() ? 0 : 1));
  std::vector<float> row(static_cast<std::size_t>(bag.dim()));
  for (Eigen::Index i = 0; i < bag.n(); ++i) {
    for (Eigen::Index j = 0; j < bag.dim(); ++j) row[static_cast<std::size_t>(j)] = bag.features(i, j);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(sizeof(float)) * bag.dim());
  }
  for (const auto& c : bag.coords)
    out.write(reinterpret_cast<const char*>(c.data()), sizeof(std::int32_t) * 2);
  if (!out) throw std::runtime_error(path + ": write failed");
}

PatchFeatureBag load_feature_bag(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kFeatMagic, 4) != 0)
    throw std::runtime_error(path + ": malformed header (bad magic)");
  auto version = read_pod<std::uint32_t>(in, path, "version");
  if (version != kFeatVersion)
    throw std::runtime_error(path + ": unsupported version " + std::to_string(version));
  auto n = read_pod<std::uint64_t>(in, path, "row count");
  auto d = read_pod<std::uint64_t>(in, path, "dimension");
  auto dtype = read_pod<std::uint8_t>(in, path, "dtype");
  auto has_coords = read_pod<std::uint8_t>(in, path, "coords flag");
  if (dtype != kDtypeF32)
    throw std::runtime_error(path + ": unsupported dtype tag " + std::to_string(dtype));
  if (n == 0 || d == 0) throw std::runtime_error(path + ": malformed header (n or d is zero)");

  PatchFeatureBag bag;
  bag.wsi_id = fs::path(path).stem().string();
  bag.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  std::vector<float> row(d);
  for (std::uint64_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(sizeof(float) * d));
    if (!in)
      throw std::runtime_error(path + ": row count mismatch (header claims " +
                               std::to_string(n) + " rows, file ends at row " +
                               std::to_string(i) + ")");
    for (std::uint64_t j = 0; j < d; ++j) {
      if (!std::isfinite(row[j]))
        throw std::runtime_error(path + ": non-finite value at row " + std::to_string(i));
      bag.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = row[j];
    }
  }
  if (has_coords) {
    bag.coords.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      in.read(reinterpret_cast<char*>(bag.coords[i].data()), sizeof(std::int32_t) * 2);
      if (!in)
        throw std::runtime_error(path + ": coords block truncated at row " + std::to_string(i));
    }
  }
  // Extra trailing bytes mean the header undercounts.
  in.peek();
  if (!in.eof()) throw std::runtime_error(path + ": row count mismatch (trailing data)");
  return bag;
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
  json j;
  j["entries"] = json::array();
  for (const auto& e : manifest.entries) {
    json je{{"wsi_id", e.wsi_id}, {"feature_file", e.feature_file}, {"report", e.report}};
    if (e.label) je["label"] = *e.label;
    if (e.time) je["time"] = *e.time;
    if (e.censored) je["censored"] = *e.censored;
    j["entries"].push_back(std::move(je));
  }
  json js = json::object();
  for (const auto& [id, s] : manifest.split_assignment) js[id] = split_name(s);
  j["split"] = std::move(js);
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": invalid JSON: " + e.what());
  }
  DatasetManifest m;
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.wsi_id = je.at("wsi_id").get<std::string>();
    e.feature_file = je.at("feature_file").get<std::string>();
    e.report = je.value("report", std::string{});
    if (je.contains("label")) e.label = je.at("label").get<int>();
    if (je.contains("time")) e.time = je.at("time").get<double>();
    if (je.contains("censored")) e.censored = je.at("censored").get<bool>();
    if (m.find(e.wsi_id))
      throw std::runtime_error(path + ": duplicate wsi_id '" + e.wsi_id +
                               "' (one report per WSI)");
    m.entries.push_back(std::move(e));
  }
  if (j.contains("split"))
    for (const auto& [id, name] : j.at("split").items())
      m.split_assignment[id] = split_from_name(name.get<std::string>());
  return m;
}

void validate_manifest(const DatasetManifest& manifest, const std::string& base_dir) {
  Eigen::Index d_in = -1;
  for (const auto& e : manifest.entries) {
    fs::path p = fs::path(e.feature_file).is_absolute()
                     ? fs::path(e.feature_file)
                     : fs::path(base_dir) / e.feature_file;
    if (!fs::exists(p))
      throw std::runtime_error("manifest entry '" + e.wsi_id + "': missing feature file " +
                               p.string());
    PatchFeatureBag bag = load_feature_bag(p.string());
    if (d_in < 0) d_in = bag.dim();
    if (bag.dim() != d_in)
      throw std::runtime_error("manifest entry '" + e.wsi_id + "': feature dimension " +
                               std::to_string(bag.dim()) + " differs from the manifest's " +
                               std::to_string(d_in));
  }
}

void save_report_corpus(const std::string& path, const std::vector<ReportRecord>& reports) {
  json j = json::object();
  for (const auto& r : reports) j[r.wsi_id] = r.text;
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << j.dump(2) << "\n";
}

std::vector<ReportRecord> load_report_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": invalid JSON: " + e.what());
  }
  std::vector<ReportRecord> out;
  for (const auto& [id, text] : j.items()) out.push_back({id, text.get<std::string>()});
  std::sort(out.begin(), out.end(),
            [](const ReportRecord& a, const ReportRecord& b) { return a.wsi_id < b.wsi_id; });
  return out;
}

DatasetManifest split_dataset(const DatasetManifest& manifest,
                              const std::array<double, 3>& ratios, std::uint64_t seed) {
  double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("split_dataset: ratios must sum to 1");
  std::size_t n = manifest.entries.size();
  std::size_t n_splits = 0;
  for (double r : ratios)
    if (r > 0.0) ++n_splits;
  if (n < n_splits || n < 3)
    throw std::invalid_argument("split_dataset: fewer entries than splits");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed ^ 0x5157a11da7a5e7ULL);
  rng.shuffle(order);

  // Largest-remainder rounding: floor everything, hand the leftover items to
  // the largest fractional parts (ties resolved in train/val/test order).
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    double exact = ratios[static_cast<std::size_t>(s)] * static_cast<double>(n);
    counts[static_cast<std::size_t>(s)] = static_cast<std::size_t>(std::floor(exact));
    frac[static_cast<std::size_t>(s)] = exact - std::floor(exact);
    assigned += counts[static_cast<std::size_t>(s)];
  }
  std::array<int, 3> by_frac{0, 1, 2};
  std::stable_sort(by_frac.begin(), by_frac.end(),
                   [&](int a, int b) { return frac[static_cast<std::size_t>(a)] >
                                              frac[static_cast<std::size_t>(b)]; });
  for (std::size_t leftover = n - assigned, i = 0; i < leftover; ++i)
    ++counts[static_cast<std::size_t>(by_frac[i % 3])];

  DatasetManifest out = manifest;
  out.split_assignment.clear();
  std::size_t at = 0;
  for (int s = 0; s < 3; ++s)
    for (std::size_t i = 0; i < counts[static_cast<std::size_t>(s)]; ++i, ++at)
      out.split_assignment[manifest.entries[order[at]].wsi_id] = static_cast<Split>(s);
  return out;
}

void SyntheticSpec::validate() const {
  if (themes.size() < 2) throw std::invalid_argument("synthetic spec: need at least 2 themes");
  if (n_min < 1) throw std::invalid_argument("synthetic spec: n_range.min must be >= 1");
  if (n_max < n_min) throw std::invalid_argument("synthetic spec: n_range empty");
  if (num_wsis < 1) throw std::invalid_argument("synthetic spec: num_wsis must be >= 1");
  if (noise_scale < 0) throw std::invalid_argument("synthetic spec: noise_scale must be >= 0");
  if (max_themes_per_wsi < 1 || max_themes_per_wsi > 3)
    throw std::invalid_argument("synthetic spec: max_themes_per_wsi must be in [1, 3]");
  for (std::size_t i = 0; i < themes.size(); ++i) {
    if (themes[i].center.size() != d_in)
      throw std::invalid_argument("synthetic spec: theme center dimension mismatch");
    for (std::size_t j = i + 1; j < themes.size(); ++j)
      if (themes[i].phrase == themes[j].phrase)
        throw std::invalid_argument("synthetic spec: phrase templates must be distinct");
  }
}

namespace {

// Closed template vocabulary; phrases are assembled from these fragments so
// the whole corpus stays within ~200 distinct words.
const char* kFindings[] = {
    "sections show invasive carcinoma with irregular nests of atypical cells",
    "the specimen contains a well circumscribed lesion with uniform nuclei",
    "there is diffuse infiltration by poorly differentiated tumor cells",
    "examination reveals benign parenchyma with focal chronic inflammation",
    "the tissue demonstrates papillary structures with fibrovascular cores",
    "sections reveal necrotic debris surrounded by viable tumor tissue",
    "the sample shows glandular proliferation with cribriform architecture",
    "there is extensive stromal fibrosis with scattered spindle cells",
    "the lesion displays solid growth with frequent mitotic figures",
    "sections demonstrate clear cell morphology with delicate vasculature",
    "the biopsy shows squamous epithelium with keratin pearl formation",
    "there is lymphovascular invasion adjacent to the primary mass",
};
const char* kQualifiers[] = {
    "margins appear free of tumor .",
    "surgical margins are involved by carcinoma .",
    "no perineural invasion is identified .",
    "lymph nodes are negative for metastasis .",
    "focal metastatic deposits are present in regional nodes .",
    "the findings are consistent with high grade disease .",
    "the appearance favors a low grade process .",
    "immunostains support the morphologic impression .",
    "tumor necrosis is not identified .",
    "mitotic activity is brisk throughout the lesion .",
    "the process extends into adjacent adipose tissue .",
    "background tissue shows unremarkable histology .",
};

}  // namespace

SyntheticSpec default_synthetic_spec(int num_wsis, int k_themes, int d_in, int n_min, int n_max,
                                     double noise_scale, std::uint64_t seed,
                                     int max_themes_per_wsi) {
  if (k_themes < 2) throw std::invalid_argument("default_synthetic_spec: need >= 2 themes");
  constexpr int kMaxThemes =
      static_cast<int>(sizeof(kFindings) / sizeof(kFindings[0]));
  if (k_themes > kMaxThemes)
    throw std::invalid_argument("default_synthetic_spec: at most " +
                                std::to_string(kMaxThemes) + " themes supported");
  SyntheticSpec spec;
  spec.num_wsis = num_wsis;
  spec.n_min = n_min;
  spec.n_max = n_max;
  spec.d_in = d_in;
  spec.noise_scale = noise_scale;
  spec.max_themes_per_wsi = max_themes_per_wsi;
  spec.seed = seed;
  Rng rng(seed_for(seed, "synthetic.centers"));
  const double separation = 4.0;
  for (int k = 0; k < k_themes; ++k) {
    Eigen::VectorXf c(d_in);
    double norm2 = 0.0;
    for (int j = 0; j < d_in; ++j) {
      double v = rng.normal();
      c(j) = static_cast<float>(v);
      norm2 += v * v;
    }
    c *= static_cast<float>(separation / std::sqrt(norm2));
    std::string phrase = std::string(kFindings[k]) + " . " +
                         kQualifiers[k % static_cast<int>(sizeof(kQualifiers) /
                                                          sizeof(kQualifiers[0]))];
    spec.themes.push_back({std::move(c), std::move(phrase)});
  }
  return spec;
}

SyntheticCorpus synth_generate(const SyntheticSpec& spec) {
  spec.validate();
  const int k = static_cast<int>(spec.themes.size());
  SyntheticCorpus corpus;
  Rng rng(seed_for(spec.seed, "synthetic.corpus"));
  for (int w = 0; w < spec.num_wsis; ++w) {
    int n = spec.n_min + static_cast<int>(rng.bounded(
                             static_cast<std::uint64_t>(spec.n_max - spec.n_min + 1)));
    int n_themes = 1 + static_cast<int>(rng.bounded(
                           static_cast<std::uint64_t>(spec.max_themes_per_wsi)));
    n_themes = std::min(n_themes, k);
    std::vector<int> pool(static_cast<std::size_t>(k));
    std::iota(pool.begin(), pool.end(), 0);
    rng.shuffle(pool);
    std::vector<int> chosen(pool.begin(), pool.begin() + n_themes);

    // Primary theme owns at least 70% of the patches so the bag mean stays
    // nearest its center; the rest is split evenly.
    std::vector<int> patch_theme(static_cast<std::size_t>(n), chosen[0]);
    if (n_themes > 1) {
      int secondary_total = static_cast<int>(std::floor(0.3 * n));
      for (int i = 0; i < secondary_total; ++i)
        patch_theme[static_cast<std::size_t>(n - 1 - i)] =
            chosen[1 + static_cast<std::size_t>(i) % static_cast<std::size_t>(n_themes - 1)];
    }

    PatchFeatureBag bag;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "SYN-%04d", w);
    bag.wsi_id = buf;
    bag.features.resize(n, spec.d_in);
    bag.coords.resize(static_cast<std::size_t>(n));
    const int grid = std::max(1, static_cast<int>(std::ceil(std::sqrt(double(n)))));
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXf& c = spec.themes[static_cast<std::size_t>(
          patch_theme[static_cast<std::size_t>(i)])].center;
      for (int j = 0; j < spec.d_in; ++j) {
        double noise = spec.noise_scale > 0 ? rng.normal(0.0, spec.noise_scale) : 0.0;
        bag.features(i, j) = static_cast<float>(static_cast<double>(c(j)) + noise);
      }
      bag.coords[static_cast<std::size_t>(i)] = {i / grid, i % grid};
    }

    std::string text = spec.themes[static_cast<std::size_t>(chosen[0])].phrase;
    for (int t = 1; t < n_themes; ++t)
      text += " " + spec.themes[static_cast<std::size_t>(chosen[t])].phrase;

    // Planted survival signal: primary theme decides the time quartile.
    // Times tie within a theme, so every comparable pair crosses quartiles
    // and the planted ordering is fully recoverable from features.
    double time = 10.0 * (chosen[0] % 4 + 1);
    bool censored = rng.uniform() < 0.15;

    corpus.bags.push_back(std::move(bag));
    corpus.reports.push_back({corpus.bags.back().wsi_id, std::move(text)});
    corpus.primary_theme.push_back(chosen[0]);
    corpus.survival_time.push_back(time);
    corpus.survival_censored.push_back(censored);
  }
  return corpus;
}

std::string write_synthetic_dataset(const SyntheticCorpus& corpus, const std::string& out_dir,
                                    const std::array<double, 3>& ratios, std::uint64_t seed) {
  fs::create_directories(fs::path(out_dir) / "features");
  DatasetManifest manifest;
  for (std::size_t i = 0; i < corpus.bags.size(); ++i) {
    const auto& bag = corpus.bags[i];
    std::string rel = "features/" + bag.wsi_id + ".hgfeat";
    write_feature_bag((fs::path(out_dir) / rel).string(), bag);
    ManifestEntry e;
    e.wsi_id = bag.wsi_id;
    e.feature_file = rel;
    e.report = corpus.reports[i].text;
    e.label = corpus.primary_theme[i];
    e.time = corpus.survival_time[i];
    e.censored = corpus.survival_censored[i];
    manifest.entries.push_back(std::move(e));
  }
  manifest = split_dataset(manifest, ratios, seed);
  save_report_corpus((fs::path(out_dir) / "reports.json").string(), corpus.reports);
  std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
  save_manifest(manifest_path, manifest);
  return manifest_path;
}

}  // namespace histgen

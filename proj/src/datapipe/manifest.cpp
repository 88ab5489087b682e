#include "pasfuse/datapipe/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

namespace pasfuse {

namespace {

[[noreturn]] void invalid(const std::string& what) { throw DataError(DataError::Kind::invalid, what); }

}  // namespace

std::string to_string(Modality m) { return m == Modality::mri ? "mri" : "us"; }

std::string to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
    case Split::unassigned:
      return "unassigned";
  }
  return "?";
}

Modality modality_from_string(const std::string& s) {
  if (s == "mri") return Modality::mri;
  if (s == "us") return Modality::us;
  invalid("unknown modality '" + s + "'");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "unassigned" || s.empty()) return Split::unassigned;
  invalid("unknown split '" + s + "'");
}

void SampleManifest::validate() const {
  std::map<std::string, Split> patient_split;
  std::map<std::string, const Sample*> by_uri;
  for (const auto& s : samples) {
    if (s.patient_id.empty()) invalid("sample " + s.uri + " has an empty patient_id");
    if (s.label != 0 && s.label != 1) invalid("sample " + s.uri + " has label outside {0,1}");
    auto [it, fresh] = patient_split.emplace(s.patient_id, s.split);
    if (!fresh && it->second != s.split) {
      invalid("patient " + s.patient_id + " appears in both " + to_string(it->second) + " and " +
              to_string(s.split));
    }
    by_uri[s.uri] = &s;
  }
  for (const auto& p : pairing) {
    for (const auto* uri : {&p.mri, &p.us}) {
      auto it = by_uri.find(*uri);
      if (it == by_uri.end()) invalid("pair for " + p.patient_id + " references missing sample " + *uri);
      if (it->second->patient_id != p.patient_id) invalid("pair " + p.patient_id + " mixes patients");
      if (it->second->label != p.label) invalid("pair " + p.patient_id + " has mismatched labels");
    }
    if (by_uri.at(p.mri)->modality != Modality::mri || by_uri.at(p.us)->modality != Modality::us) {
      invalid("pair " + p.patient_id + " has wrong modalities");
    }
  }
}

std::filesystem::path SampleManifest::resolve(const std::string& uri) const {
  std::filesystem::path p(uri);
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

std::vector<Sample> SampleManifest::select(Split split) const {
  std::vector<Sample> out;
  for (const auto& s : samples)
    if (s.split == split) out.push_back(s);
  return out;
}

Split SampleManifest::split_of(const Pair& pair) const {
  for (const auto& s : samples)
    if (s.uri == pair.mri) return s.split;
  invalid("pair references missing sample " + pair.mri);
}

std::vector<Pair> SampleManifest::pairs(Split split) const {
  std::map<std::string, Split> of;
  for (const auto& s : samples) of[s.uri] = s.split;
  std::vector<Pair> out;
  for (const auto& p : pairing)
    if (of.at(p.mri) == split) out.push_back(p);
  return out;
}

void to_json(nlohmann::json& j, const SampleManifest& m) {
  j = nlohmann::json{{"version", m.version}, {"samples", nlohmann::json::array()}, {"pairing", nlohmann::json::array()}};
  for (const auto& s : m.samples) {
    j["samples"].push_back({{"patient_id", s.patient_id},
                            {"modality", to_string(s.modality)},
                            {"label", s.label},
                            {"uri", s.uri},
                            {"split", to_string(s.split)}});
  }
  for (const auto& p : m.pairing) {
    j["pairing"].push_back({{"patient_id", p.patient_id}, {"mri", p.mri}, {"us", p.us}, {"label", p.label}});
  }
}

void from_json(const nlohmann::json& j, SampleManifest& m) {
  m.version = j.value("version", 1);
  m.samples.clear();
  m.pairing.clear();
  for (const auto& s : j.at("samples")) {
    Sample x;
    x.patient_id = s.at("patient_id").get<std::string>();
    x.modality = modality_from_string(s.at("modality").get<std::string>());
    x.label = s.at("label").get<int>();
    x.uri = s.at("uri").get<std::string>();
    x.split = split_from_string(s.value("split", std::string("unassigned")));
    m.samples.push_back(std::move(x));
  }
  if (j.contains("pairing")) {
    for (const auto& p : j.at("pairing")) {
      m.pairing.push_back({p.at("patient_id").get<std::string>(), p.at("mri").get<std::string>(),
                           p.at("us").get<std::string>(), p.at("label").get<int>()});
    }
  }
}

SampleManifest SampleManifest::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError(DataError::Kind::io, "cannot open manifest " + path.string());
  SampleManifest m;
  try {
    m = nlohmann::json::parse(is).get<SampleManifest>();
  } catch (const nlohmann::json::exception& e) {
    invalid("manifest " + path.string() + ": " + e.what());
  }
  m.base_dir = path.parent_path();
  m.validate();
  return m;
}

void SampleManifest::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError(DataError::Kind::io, "cannot write manifest " + path.string());
  os << nlohmann::json(*this).dump(2) << '\n';
}

std::array<Index, 3> apportion(Index n, const SplitRatios& ratios) {
  std::array<Index, 3> out{};
  std::array<double, 3> frac{};
  Index used = 0;
  for (int i = 0; i < 3; ++i) {
    const double q = n * ratios[i];
    // Guard against representation error such as 0.7 * 10 = 6.9999999.
    out[i] = static_cast<Index>(std::floor(q + 1e-9));
    frac[i] = q - out[i];
    used += out[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b] + 1e-12; });
  for (Index r = n - used, k = 0; r > 0; --r, ++k) ++out[order[k % 3]];
  return out;
}

SampleManifest stratified_split(const SampleManifest& manifest, const SplitRatios& ratios,
                                std::uint64_t seed) {
  double total = 0;
  for (double r : ratios) {
    if (r < 0) invalid("split ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) invalid("split ratios must sum to 1");

  std::map<std::string, int> patient_label;
  for (const auto& s : manifest.samples) {
    auto [it, fresh] = patient_label.emplace(s.patient_id, s.label);
    if (!fresh && it->second != s.label) invalid("patient " + s.patient_id + " has mixed labels");
  }
  std::array<std::vector<std::string>, 2> by_class;
  for (const auto& [id, label] : patient_label) {
    if (label != 0 && label != 1) invalid("label outside {0,1} for patient " + id);
    by_class[label].push_back(id);
  }

  std::map<std::string, Split> assigned;
  const Rng base(seed);
  for (int c = 0; c < 2; ++c) {
    auto& ids = by_class[c];
    if (ids.empty()) invalid("class " + std::to_string(c) + " has no patients");
    Rng rng = base.split(static_cast<std::uint64_t>(c));
    for (std::size_t i = ids.size() - 1; i > 0; --i) std::swap(ids[i], ids[rng.below(i + 1)]);
    const auto counts = apportion(static_cast<Index>(ids.size()), ratios);
    std::size_t k = 0;
    for (int s = 0; s < 3; ++s)
      for (Index n = 0; n < counts[s]; ++n) assigned[ids[k++]] = static_cast<Split>(s);
  }
  SampleManifest out = manifest;
  for (auto& s : out.samples) s.split = assigned.at(s.patient_id);
  return out;
}

std::vector<Index> class_counts(const std::vector<Sample>& samples) {
  std::vector<Index> counts(2, 0);
  for (const auto& s : samples) ++counts.at(static_cast<std::size_t>(s.label));
  return counts;
}

std::vector<Sample> oversample_minority(const std::vector<Sample>& train, std::uint64_t seed) {
  const auto counts = class_counts(train);
  if (counts[0] == 0 || counts[1] == 0) invalid("oversampling needs both classes present");
  const int minority = counts[0] < counts[1] ? 0 : 1;
  const Index deficit = std::abs(counts[0] - counts[1]);
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < train.size(); ++i)
    if (train[i].label == minority) pool.push_back(i);
  std::vector<Sample> out = train;
  Rng rng(seed);
  for (Index d = 0; d < deficit; ++d) {
    Sample dup = train[pool[rng.below(pool.size())]];
    dup.force_augment = true;
    out.push_back(std::move(dup));
  }
  return out;
}

std::vector<double> class_weights(const std::vector<Index>& counts) {
  if (counts.empty()) invalid("class_weights needs at least one class");
  Index total = 0;
  for (Index c : counts) {
    if (c <= 0) invalid("class_weights needs positive counts");
    total += c;
  }
  std::vector<double> w;
  for (Index c : counts) w.push_back(static_cast<double>(total) / (static_cast<double>(counts.size()) * c));
  return w;
}

Rng sample_rng(std::uint64_t seed, const std::string& patient_id, int epoch, std::uint64_t ordinal) {
  return Rng(hash_combine(hash_combine(hash_combine(seed, hash_string(patient_id)),
                                       static_cast<std::uint64_t>(epoch)),
                          ordinal));
}

}  // namespace pasfuse

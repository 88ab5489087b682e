#include "pasfuse/synthgen/synthgen.hpp"

#include "pasfuse/datapipe/formats.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace pasfuse {

namespace {

enum Stream : std::uint64_t { kLabels = 1, kVolumeField, kVolumeNoise, kBands, kImageField, kImageNoise, kBlobs };

Rng stream(const SynthSpec& spec, Index index, Stream s) {
  return Rng(spec.seed).split(static_cast<std::uint64_t>(index)).split(s);
}

std::vector<Index> label_permutation(const SynthSpec& spec) {
  std::vector<Index> perm(static_cast<std::size_t>(spec.n_pairs));
  for (Index i = 0; i < spec.n_pairs; ++i) perm[i] = i;
  Rng rng = Rng(spec.seed).split(kLabels);
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  return perm;
}

std::vector<int> all_labels(const SynthSpec& spec) {
  std::vector<int> labels(static_cast<std::size_t>(spec.n_pairs), 0);
  const auto perm = label_permutation(spec);
  for (Index k = 0; k < positive_count(spec); ++k) labels[perm[k]] = 1;
  return labels;
}

struct Wave {
  double amplitude, phase;
  std::array<int, 3> freq;
};

std::vector<Wave> draw_waves(Rng& rng, int dims) {
  std::vector<Wave> w(3);
  for (auto& x : w) {
    x.amplitude = rng.uniform(0.02, SynthGeometry::background_amplitude_max);
    x.phase = rng.uniform(0, 2 * std::numbers::pi);
    x.freq = {0, 0, 0};
    while (x.freq == std::array<int, 3>{0, 0, 0}) {
      for (int a = 0; a < dims; ++a) x.freq[a] = static_cast<int>(rng.below(3));
    }
  }
  return w;
}

double field(const std::vector<Wave>& waves, const std::array<double, 3>& u) {
  double v = SynthGeometry::background_level;
  for (const auto& w : waves) {
    v += w.amplitude *
         std::cos(2 * std::numbers::pi * (w.freq[0] * u[0] + w.freq[1] * u[1] + w.freq[2] * u[2]) + w.phase);
  }
  return v;
}

struct Ellipsoid {
  std::array<double, 3> centre;
  double angle;                 // in the first two axes
  std::array<double, 3> semi;   // along, across, depth
  std::array<double, 3> shell;  // semi-axes of the enclosing shell

  double radius(double i, double j, double k, const std::array<double, 3>& s) const {
    const double di = i - centre[0], dj = j - centre[1], dk = k - centre[2];
    const double u = di * std::cos(angle) + dj * std::sin(angle);
    const double v = -di * std::sin(angle) + dj * std::cos(angle);
    return (u / s[0]) * (u / s[0]) + (v / s[1]) * (v / s[1]) + (dk / s[2]) * (dk / s[2]);
  }
};

std::vector<Ellipsoid> draw_bands(Rng& rng, const std::array<Index, 3>& e) {
  std::vector<Ellipsoid> out;
  for (int b = 0; b < SynthGeometry::bands; ++b) {
    Ellipsoid el;
    el.centre = {rng.uniform(0.3, 0.7) * (e[0] - 1), rng.uniform(0.3, 0.7) * (e[1] - 1),
                 rng.uniform(0.35, 0.65) * (e[2] - 1)};
    el.angle = rng.uniform(0, std::numbers::pi);
    const double half_len = rng.uniform(SynthGeometry::band_half_length_frac_min,
                                        SynthGeometry::band_half_length_frac_max) * e[0];
    const double half_thick = rng.uniform(SynthGeometry::band_half_thickness_min,
                                          SynthGeometry::band_half_thickness_max);
    const double half_depth = std::max(1.5, SynthGeometry::band_half_depth_frac * e[2]);
    el.semi = {half_len, half_thick, half_depth};
    el.shell = {half_len + 2, half_thick + 3, half_depth + 2};
    out.push_back(el);
  }
  return out;
}

std::vector<Ellipsoid> draw_blobs(Rng& rng, const std::array<Index, 2>& e) {
  std::vector<Ellipsoid> out;
  for (int b = 0; b < SynthGeometry::blobs; ++b) {
    Ellipsoid el;
    el.centre = {rng.uniform(0.3, 0.7) * (e[0] - 1), rng.uniform(0.3, 0.7) * (e[1] - 1), 0.0};
    el.angle = rng.uniform(0, std::numbers::pi);
    const double a = rng.uniform(SynthGeometry::blob_radius_min, SynthGeometry::blob_radius_max);
    const double b2 = rng.uniform(SynthGeometry::blob_radius_min, SynthGeometry::blob_radius_max);
    el.semi = {a, b2, 1.0};
    el.shell = {a + 4, b2 + 4, 1.0};
    out.push_back(el);
  }
  return out;
}

double masked_mean(const Buffer<float>& values, const Buffer<float>& mask) {
  const double n = mask.cast<double>().sum();
  if (n == 0) return 0.0;
  return values.cast<double>().dot(mask.cast<double>()) / n;
}

std::string patient_id(const SynthSpec& spec, Index index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05lld", static_cast<long long>(index));
  return spec.id_prefix + buf;
}

}  // namespace

void SynthSpec::validate() const {
  if (n_pairs < 0) throw std::invalid_argument("n_pairs must be non-negative");
  if (!(positive_fraction > 0 && positive_fraction < 1)) {
    throw std::invalid_argument("positive_fraction must lie in (0, 1)");
  }
  if (!(signal_strength > 0)) throw std::invalid_argument("signal_strength must be positive");
  if (!(noise_sigma >= 0)) throw std::invalid_argument("noise_sigma must be non-negative");
  profile.validate();
}

void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = nlohmann::json{{"n_pairs", s.n_pairs},
                     {"positive_fraction", s.positive_fraction},
                     {"profile", s.profile},
                     {"mode", s.mode == SynthMode::redundant ? "redundant" : "complementary"},
                     {"modalities", s.modalities == SynthModalities::both ? "both"
                                    : s.modalities == SynthModalities::mri ? "mri"
                                                                           : "us"},
                     {"signal_strength", s.signal_strength},
                     {"noise_sigma", s.noise_sigma},
                     {"seed", s.seed},
                     {"id_prefix", s.id_prefix}};
}

void from_json(const nlohmann::json& j, SynthSpec& s) {
  s = SynthSpec{};
  s.n_pairs = j.value("n_pairs", s.n_pairs);
  s.positive_fraction = j.value("positive_fraction", s.positive_fraction);
  if (j.contains("profile")) {
    const auto& p = j.at("profile");
    s.profile = p.is_string() ? ScaleProfile::named(p.get<std::string>()) : p.get<ScaleProfile>();
  }
  const auto mode = j.value("mode", std::string("complementary"));
  if (mode == "redundant") {
    s.mode = SynthMode::redundant;
  } else if (mode == "complementary") {
    s.mode = SynthMode::complementary;
  } else {
    throw std::invalid_argument("unknown synth mode '" + mode + "'");
  }
  const auto mods = j.value("modalities", std::string("both"));
  if (mods == "both") {
    s.modalities = SynthModalities::both;
  } else if (mods == "mri") {
    s.modalities = SynthModalities::mri;
  } else if (mods == "us") {
    s.modalities = SynthModalities::us;
  } else {
    throw std::invalid_argument("unknown modalities '" + mods + "'");
  }
  s.signal_strength = j.value("signal_strength", s.signal_strength);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.seed = j.value("seed", s.seed);
  s.id_prefix = j.value("id_prefix", s.id_prefix);
  s.validate();
}

Index positive_count(const SynthSpec& spec) {
  return static_cast<Index>(std::llround(spec.positive_fraction * static_cast<double>(spec.n_pairs)));
}

int synth_label(const SynthSpec& spec, Index index) { return all_labels(spec).at(static_cast<std::size_t>(index)); }

SynthPair generate_pair(const SynthSpec& spec, Index index) {
  if (index < 0 || index >= spec.n_pairs) throw std::out_of_range("pair index out of range");
  const auto labels = all_labels(spec);
  SynthPair p;
  p.index = index;
  p.patient_id = patient_id(spec, index);
  p.label = labels[index];
  if (p.label == 1) {
    if (spec.mode == SynthMode::redundant) {
      p.mri_signal = p.us_signal = true;
    } else {
      Index rank = 0;
      for (Index i = 0; i < index; ++i) rank += labels[i];
      p.mri_signal = rank % 2 == 0;
      p.us_signal = !p.mri_signal;
    }
  }
  const double strength = spec.signal_strength;

  // Volume: smooth field, candidate bands, noise.
  const auto& e = spec.profile.mri_input;
  p.volume = Volume(e);
  p.band_mask = Volume(e);
  p.band_shell = Volume(e);
  {
    Rng frng = stream(spec, index, kVolumeField);
    Rng nrng = stream(spec, index, kVolumeNoise);
    Rng grng = stream(spec, index, kBands);
    const auto waves = draw_waves(frng, 3);
    const auto bands = draw_bands(grng, e);
    for (Index i = 0; i < e[0]; ++i)
      for (Index j = 0; j < e[1]; ++j)
        for (Index k = 0; k < e[2]; ++k) {
          bool in = false, near = false;
          for (const auto& b : bands) {
            in = in || b.radius(i, j, k, b.semi) <= 1.0;
            near = near || b.radius(i, j, k, b.shell) <= 1.0;
          }
          double v = field(waves, {double(i) / e[0], double(j) / e[1], double(k) / e[2]});
          if (in && p.mri_signal) v -= strength;
          v += spec.noise_sigma * nrng.normal();
          p.volume(i, j, k) = static_cast<float>(v);
          p.band_mask(i, j, k) = in ? 1.0f : 0.0f;
          p.band_shell(i, j, k) = near && !in ? 1.0f : 0.0f;
        }
  }

  // Image: smooth field, candidate blobs, noise.
  const auto& u = spec.profile.us_input;
  p.image = Image(1, u);
  p.blob_mask = Image(1, u);
  p.blob_shell = Image(1, u);
  {
    Rng frng = stream(spec, index, kImageField);
    Rng nrng = stream(spec, index, kImageNoise);
    Rng grng = stream(spec, index, kBlobs);
    const auto waves = draw_waves(frng, 2);
    const auto blobs = draw_blobs(grng, u);
    for (Index i = 0; i < u[0]; ++i)
      for (Index j = 0; j < u[1]; ++j) {
        bool in = false, near = false;
        for (const auto& b : blobs) {
          in = in || b.radius(i, j, 0, b.semi) <= 1.0;
          near = near || b.radius(i, j, 0, b.shell) <= 1.0;
        }
        double v = field(waves, {double(i) / u[0], double(j) / u[1], 0.0});
        if (in && p.us_signal) v += strength;
        v += spec.noise_sigma * nrng.normal();
        p.image(0, i, j) = static_cast<float>(v);
        p.blob_mask(0, i, j) = in ? 1.0f : 0.0f;
        p.blob_shell(0, i, j) = near && !in ? 1.0f : 0.0f;
      }
  }
  return p;
}

double mri_contrast(const SynthPair& p) {
  return masked_mean(p.volume.voxels, p.band_shell.voxels) - masked_mean(p.volume.voxels, p.band_mask.voxels);
}

double us_contrast(const SynthPair& p) {
  return masked_mean(p.image.pixels, p.blob_mask.pixels) - masked_mean(p.image.pixels, p.blob_shell.pixels);
}

bool oracle_positive(double contrast, const SynthSpec& spec) { return contrast > 0.5 * spec.signal_strength; }

OracleReport evaluate_oracle(const SynthSpec& spec) {
  struct Tally {
    Index correct = 0, total = 0;
    Index tp = 0, pos = 0, tn = 0, neg = 0;
  };
  Tally mri, us;
  auto score = [&](Tally& t, bool predicted, int label, bool bearing) {
    if (label == 0 || bearing) {
      ++t.total;
      t.correct += predicted == (label == 1);
    }
    if (label == 0) {
      ++t.neg;
      t.tn += !predicted;
    } else if (!bearing) {
      ++t.pos;
      t.tp += predicted;
    }
  };
  for (Index i = 0; i < spec.n_pairs; ++i) {
    const auto p = generate_pair(spec, i);
    score(mri, oracle_positive(mri_contrast(p), spec), p.label, p.mri_signal);
    score(us, oracle_positive(us_contrast(p), spec), p.label, p.us_signal);
  }
  auto balanced = [](const Tally& t) {
    if (t.pos == 0 || t.neg == 0) return std::numeric_limits<double>::quiet_NaN();
    return 0.5 * (static_cast<double>(t.tp) / t.pos + static_cast<double>(t.tn) / t.neg);
  };
  OracleReport r;
  r.samples = spec.n_pairs;
  r.mri_bearing_accuracy = mri.total ? static_cast<double>(mri.correct) / mri.total : 0.0;
  r.us_bearing_accuracy = us.total ? static_cast<double>(us.correct) / us.total : 0.0;
  r.mri_nonbearing_balanced = balanced(mri);
  r.us_nonbearing_balanced = balanced(us);
  return r;
}

SampleManifest generate_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  SampleManifest m;
  m.base_dir = out_dir;
  if (spec.n_pairs == 0) return m;
  const bool want_mri = spec.modalities != SynthModalities::us;
  const bool want_us = spec.modalities != SynthModalities::mri;
  nlohmann::json signals = nlohmann::json::array();
  for (Index i = 0; i < spec.n_pairs; ++i) {
    const auto p = generate_pair(spec, i);
    const std::string mri_uri = "mri/" + p.patient_id + ".rvol";
    const std::string us_uri = "us/" + p.patient_id + ".rimg";
    if (want_mri) {
      write_rvol(out_dir / mri_uri, p.volume);
      m.samples.push_back({p.patient_id, Modality::mri, p.label, mri_uri, Split::unassigned});
    }
    if (want_us) {
      write_rimg(out_dir / us_uri, p.image);
      m.samples.push_back({p.patient_id, Modality::us, p.label, us_uri, Split::unassigned});
    }
    if (want_mri && want_us) m.pairing.push_back({p.patient_id, mri_uri, us_uri, p.label});
    signals.push_back({{"index", i},
                       {"patient_id", p.patient_id},
                       {"label", p.label},
                       {"mri_signal", p.mri_signal},
                       {"us_signal", p.us_signal}});
  }
  m.validate();
  m.save(out_dir / "manifest.json");
  std::ofstream(out_dir / "signals.json") << signals.dump(2) << '\n';
  std::ofstream(out_dir / "synth_spec.json") << nlohmann::json(spec).dump(2) << '\n';
  return m;
}

}  // namespace pasfuse

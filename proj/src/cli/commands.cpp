#include "commands.hpp"

#include "pasfuse/datapipe/formats.hpp"
#include "pasfuse/evalstats/report.hpp"
#include "pasfuse/gradcam/gradcam.hpp"
#include "pasfuse/synthgen/synthgen.hpp"
#include "pasfuse/trainer/train.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace pasfuse::cli {

namespace fs = std::filesystem;

namespace {

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

void write_json(Context& ctx, const fs::path& p, const nlohmann::json& j) {
  write_text(p, j.dump(2) + "\n");
  ctx.wrote(p);
}

void write_file(Context& ctx, const fs::path& p, const std::string& text) {
  write_text(p, text);
  ctx.wrote(p);
}

std::string required_path(const nlohmann::json& cfg, const char* key) {
  const std::string v = cfg.at("data").at(key).get<std::string>();
  if (v.empty()) throw std::invalid_argument(std::string("data.") + key + " is required");
  return v;
}

SampleManifest load_manifest(const nlohmann::json& cfg, const char* key) {
  return SampleManifest::load(required_path(cfg, key));
}

SplitRatios split_ratios(const nlohmann::json& split, bool paired) {
  if (split.at("ratios").is_null()) return paired ? SplitRatios{0.6, 0.15, 0.25} : SplitRatios{0.7, 0.1, 0.2};
  return split.at("ratios").get<SplitRatios>();
}

std::string split_summary(const SampleManifest& m) {
  std::ostringstream os;
  for (Split s : {Split::train, Split::val, Split::test}) {
    Index pos = 0, neg = 0;
    for (const auto& x : m.select(s)) (x.label ? pos : neg)++;
    os << to_string(s) << " " << neg << "/" << pos << "  ";
  }
  return os.str();
}

void log_epoch(const Context& ctx, const std::string& tag, const EpochStats& e) {
  ctx.debug(tag + " epoch " + std::to_string(e.epoch) + " train_loss " + fixed(e.train_loss) + " val_loss " +
            fixed(e.val_loss) + " val_acc " + fixed(e.val_accuracy) + " lr " + std::to_string(e.lr));
}

void write_test_report(Context& ctx, const fs::path& dir, const std::string& name, const MetricsReport& r) {
  write_json(ctx, dir / "metrics.json", r);
  write_file(ctx, dir / "roc.svg", roc_svg({{name, r.roc}}));
}

}  // namespace

void run_synth(Context& ctx) {
  const SynthSpec spec = ctx.config.at("synth").get<SynthSpec>();
  SampleManifest m = generate_dataset(spec, ctx.out);
  if (spec.n_pairs == 0) {
    ctx.info("synth: n_pairs = 0, nothing written");
    return;
  }
  const auto& split = ctx.config.at("split");
  if (split.at("enabled").get<bool>()) {
    const SplitRatios r = split_ratios(split, spec.modalities == SynthModalities::both);
    SampleManifest s = stratified_split(m, r, split.at("seed").get<std::uint64_t>());
    s.base_dir = m.base_dir;
    s.save(ctx.out / "manifest.json");
    m = s;
  }
  for (const char* f : {"manifest.json", "signals.json", "synth_spec.json"}) ctx.wrote(ctx.out / f);
  ctx.info("synth: " + std::to_string(m.samples.size()) + " samples, " + std::to_string(m.pairing.size()) +
           " pairs  " + split_summary(m));
}

void run_preprocess(Context& ctx) {
  const SampleManifest in = load_manifest(ctx.config, "manifest");
  const ScaleProfile profile = ScaleProfile::named(ctx.config.at("profile").get<std::string>());
  SampleStore store(in, profile.mri_input, profile.us_input);
  SampleManifest out;
  out.base_dir = ctx.out;
  std::map<std::string, std::string> renamed;
  std::set<std::string> used;
  for (std::size_t i = 0; i < in.samples.size(); ++i) {
    Sample s = in.samples[i];
    const bool mri = s.modality == Modality::mri;
    std::string stem = fs::path(s.uri).stem().string();
    if (stem.size() > 4 && stem.substr(stem.size() - 4) == ".nii") stem.resize(stem.size() - 4);
    std::string uri = std::string(mri ? "mri/" : "us/") + stem + (mri ? ".rvol" : ".rimg");
    if (!used.insert(uri).second) {
      uri = std::string(mri ? "mri/" : "us/") + stem + "_" + std::to_string(i) + (mri ? ".rvol" : ".rimg");
      used.insert(uri);
    }
    if (mri)
      write_rvol(ctx.out / uri, store.volume(s.uri));
    else
      write_rimg(ctx.out / uri, store.image(s.uri));
    renamed[s.uri] = uri;
    s.uri = uri;
    out.samples.push_back(s);
  }
  for (Pair p : in.pairing) {
    p.mri = renamed.at(p.mri);
    p.us = renamed.at(p.us);
    out.pairing.push_back(p);
  }
  const auto& split = ctx.config.at("split");
  if (split.at("enabled").get<bool>()) {
    SampleManifest s = stratified_split(out, split_ratios(split, !out.pairing.empty()), split.at("seed").get<std::uint64_t>());
    s.base_dir = out.base_dir;
    out = s;
  }
  out.save(ctx.out / "manifest.json");
  ctx.wrote(ctx.out / "manifest.json");
  ctx.info("preprocess: " + std::to_string(out.samples.size()) + " samples written");
}

void run_train(Context& ctx) {
  const TrainConfig c = ctx.config.at("trainer").get<TrainConfig>();
  const SampleManifest m = load_manifest(ctx.config, "manifest");
  TrainOptions o;
  o.out_dir = ctx.out;
  o.on_epoch = [&](const EpochStats& e) { log_epoch(ctx, to_string(c.model), e); };
  const TrainResult r = train(c, m, o);
  ctx.wrote(ctx.out / "best.ckpt");
  ctx.wrote(sidecar_path(ctx.out / "best.ckpt"));
  ctx.wrote(ctx.out / "epochs.csv");
  write_json(ctx, ctx.out / "record.json", r.record);
  if (r.record.test) write_test_report(ctx, ctx.out, to_string(c.model), *r.record.test);
  ctx.info("train: best epoch " + std::to_string(r.record.best_epoch) + ", val accuracy " +
           fixed(r.record.best_val_accuracy) +
           (r.record.test ? ", test accuracy " + fixed(r.record.test->macro.accuracy) : std::string()));
}

void run_multirun(Context& ctx) {
  const TrainConfig c = ctx.config.at("trainer").get<TrainConfig>();
  const int runs = ctx.config.at("runs").get<int>();
  const SampleManifest m = load_manifest(ctx.config, "manifest");
  TrainOptions o;
  o.out_dir = ctx.out;
  int run = 0;
  o.on_epoch = [&](const EpochStats& e) {
    log_epoch(ctx, to_string(c.model) + " run " + std::to_string(run), e);
    if (e.epoch + 1 == c.epochs) ++run;
  };
  const MultiRunResult r = multi_run(c, m, runs, o);
  nlohmann::json records = nlohmann::json::array();
  std::vector<RunMetrics> metrics;
  for (const auto& rec : r.runs) {
    records.push_back(rec);
    if (rec.test) metrics.push_back(RunMetrics::from(*rec.test));
  }
  write_json(ctx, ctx.out / "summary.json", {{"model", to_string(c.model)}, {"summary", r.summary}, {"runs", records}});
  write_file(ctx, ctx.out / "runs.csv", runs_csv({to_string(c.model)}, {metrics}));
  if (!metrics.empty()) {
    write_file(ctx, ctx.out / "summary.svg", summary_bar_svg({to_string(c.model)}, {r.summary}));
    ctx.info("multirun: test accuracy " + fixed(r.summary.mean[0]) + " +/- " + fixed(r.summary.sd[0]) + " (best " +
             fixed(r.summary.best[0]) + ")");
  }
}

void run_compare(Context& ctx) {
  const ProtocolConfig pc = ctx.config.at("protocol").get<ProtocolConfig>();
  const SampleManifest mri = load_manifest(ctx.config, "mri_manifest");
  const SampleManifest us = load_manifest(ctx.config, "us_manifest");
  const SampleManifest paired = load_manifest(ctx.config, "paired_manifest");
  const ProtocolResult r = comparative_protocol(mri, us, paired, pc, ctx.out, [&](const std::string& s) { ctx.info(s); });
  for (int run = 0; run < pc.runs; ++run)
    for (const char* m : {"mri", "us", "fusion"}) {
      const fs::path d = ctx.out / ("run" + std::to_string(run)) / m;
      ctx.wrote(d / "best.ckpt");
      ctx.wrote(sidecar_path(d / "best.ckpt"));
      ctx.wrote(d / "epochs.csv");
    }
  write_json(ctx, ctx.out / "protocol.json", r);
  std::vector<std::vector<RunMetrics>> metrics;
  for (const auto& per_model : r.shared_test) {
    metrics.emplace_back();
    for (const auto& rep : per_model) metrics.back().push_back(RunMetrics::from(rep));
  }
  write_file(ctx, ctx.out / "runs.csv", runs_csv(r.models, metrics));
  nlohmann::json summary = nlohmann::json::object();
  for (std::size_t i = 0; i < r.models.size(); ++i) summary[r.models[i]] = r.summaries[i];
  write_json(ctx, ctx.out / "summary.json", summary);
  write_file(ctx, ctx.out / "summary.svg", summary_bar_svg(r.models, r.summaries));
  std::vector<std::pair<std::string, std::vector<RocPoint>>> curves;
  for (std::size_t i = 0; i < r.models.size(); ++i) curves.push_back({r.models[i], r.shared_test[i].front().roc});
  write_file(ctx, ctx.out / "roc.svg", roc_svg(curves));
  if (r.comparison) {
    write_json(ctx, ctx.out / "comparison.json", *r.comparison);
    write_file(ctx, ctx.out / "comparison.csv", comparison_csv(*r.comparison));
  }
  for (std::size_t i = 0; i < r.models.size(); ++i)
    ctx.info(r.models[i] + ": shared test accuracy " + fixed(r.summaries[i].mean[0]) + " +/- " +
             fixed(r.summaries[i].sd[0]));
}

void run_eval(Context& ctx) {
  const auto model = restore_model(required_path(ctx.config, "checkpoint"));
  const SampleManifest m = load_manifest(ctx.config, "manifest");
  const Split split = split_from_string(ctx.config.at("data").at("split").get<std::string>());
  const auto items = items_for(model->kind(), m, split);
  if (items.empty()) throw DataError(DataError::Kind::invalid, "no " + to_string(split) + " items for this model");
  SampleStore store(m, model->profile().mri_input, model->profile().us_input);
  const Predictions p = predict(*model, items, store, ctx.config.at("batch_size").get<Index>());
  const MetricsReport rep = evaluate(p.labels, p.scores, ctx.config.at("threshold").get<double>());
  write_test_report(ctx, ctx.out, to_string(model->kind()), rep);
  std::ostringstream csv;
  csv.precision(9);
  csv << "id,label,score\n";
  for (std::size_t i = 0; i < p.ids.size(); ++i) csv << p.ids[i] << ',' << p.labels[i] << ',' << p.scores[i] << '\n';
  write_file(ctx, ctx.out / "predictions.csv", csv.str());
  ctx.info("eval: accuracy " + fixed(rep.macro.accuracy) + ", AUC " + fixed(rep.auc) + ", macro F1 " + fixed(rep.macro.f1));
}

namespace {

// Mean heat inside the planted region over mean heat outside it.
double mass_ratio(const Buffer<float>& heat, const Buffer<float>& mask) {
  double in = 0, out = 0;
  Index n_in = 0, n_out = 0;
  for (Index i = 0; i < heat.size(); ++i) {
    if (mask[i] > 0.5f) {
      in += heat[i];
      ++n_in;
    } else {
      out += heat[i];
      ++n_out;
    }
  }
  if (n_in == 0 || n_out == 0) return std::numeric_limits<double>::quiet_NaN();
  const double mo = out / n_out;
  return mo > 0 ? (in / n_in) / mo : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

void run_explain(Context& ctx) {
  const auto model = restore_model(required_path(ctx.config, "checkpoint"));
  const SampleManifest m = load_manifest(ctx.config, "manifest");
  const auto& ex = ctx.config.at("explain");
  const Split split = split_from_string(ctx.config.at("data").at("split").get<std::string>());
  const int cls = ex.at("class").get<int>();
  std::vector<std::string> layers = ex.at("layers").get<std::vector<std::string>>();
  if (layers.empty()) layers = model->cam_layers();
  OverlayOptions opts;
  opts.depth_fractions = ex.at("depth_fractions").get<std::vector<double>>();
  const auto max_samples = ex.at("max_samples").get<std::size_t>();
  const bool positives_only = ex.at("positives_only").get<bool>();

  // Synthetic data: planted regions for the localization check.
  std::optional<SynthSpec> synth;
  std::map<std::string, nlohmann::json> signals;
  if (fs::exists(m.base_dir / "synth_spec.json") && fs::exists(m.base_dir / "signals.json")) {
    synth = nlohmann::json::parse(std::ifstream(m.base_dir / "synth_spec.json")).get<SynthSpec>();
    for (const auto& s : nlohmann::json::parse(std::ifstream(m.base_dir / "signals.json")))
      signals[s.at("patient_id").get<std::string>()] = s;
  }

  SampleStore store(m, model->profile().mri_input, model->profile().us_input);
  nlohmann::json entries = nlohmann::json::array();
  std::map<std::string, std::pair<double, int>> ratios;
  std::size_t done = 0;
  for (const Item& item : items_for(model->kind(), m, split)) {
    if (done >= max_samples) break;
    if (positives_only && item.label != 1) continue;
    ++done;
    const ModelInput input = make_batch(model->kind(), {&item}, store);
    std::optional<SynthPair> planted;
    for (const auto& layer : layers) {
      const Heatmap h = gradcam(*model, input, cls, layer, item.id);
      std::string tag = layer;
      std::replace(tag.begin(), tag.end(), '.', '-');
      const std::string stem = item.id + "_" + tag;
      const bool volume = h.values.rank() == 3;
      nlohmann::json e = volume ? render_overlay(h, store.volume(item.mri), ctx.out / "heatmaps", stem, opts)
                                : render_overlay(h, store.image(item.us), ctx.out / "heatmaps", stem);
      auto it = signals.find(item.id);
      if (synth && it != signals.end() && it->second.at(volume ? "mri_signal" : "us_signal").get<bool>()) {
        if (!planted) planted = generate_pair(*synth, it->second.at("index").get<Index>());
        const double r =
            mass_ratio(h.values.data(), volume ? planted->band_mask.voxels : planted->blob_mask.pixels);
        if (std::isfinite(r)) {
          e["signal_mass_ratio"] = r;
          auto& acc = ratios[volume ? "mri" : "us"];
          acc.first += r;
          ++acc.second;
        }
      }
      entries.push_back(e);
    }
  }
  nlohmann::json check = nlohmann::json::object();
  for (const auto& [mod, acc] : ratios) {
    check[mod] = {{"mean_ratio", acc.first / acc.second}, {"samples", acc.second}};
    ctx.info("explain: " + mod + " mean in/out heat ratio " + fixed(acc.first / acc.second, 3) + " over " +
             std::to_string(acc.second) + " planted samples");
  }
  write_json(ctx, ctx.out / "heatmaps" / "index.json",
             {{"model", to_string(model->kind())}, {"class", cls}, {"layers", layers}, {"heatmaps", entries},
              {"localization", check}});
  for (const auto& e : entries) {
    for (const char* k : {"source", "overlay", "side_by_side"})
      if (e.contains(k)) ctx.wrote(ctx.out / "heatmaps" / e[k].get<std::string>());
    if (e.contains("slices"))
      for (const auto& s : e["slices"]) {
        ctx.wrote(ctx.out / "heatmaps" / s["source"].get<std::string>());
        ctx.wrote(ctx.out / "heatmaps" / s["overlay"].get<std::string>());
      }
  }
  ctx.info("explain: " + std::to_string(entries.size()) + " heatmaps for " + std::to_string(done) + " samples");
}

void run_stats(Context& ctx) {
  const std::string path = required_path(ctx.config, "runs");
  std::ifstream f(path);
  if (!f) throw DataError(DataError::Kind::io, "cannot read " + path);
  std::string line;
  std::getline(f, line);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) header.push_back(cell);
  }
  std::vector<std::string> expected{"model", "run"};
  for (const char* n : kMetricNames) expected.push_back(n);
  if (header != expected) throw DataError(DataError::Kind::invalid, path + ": expected header model,run,accuracy,auc,precision,recall,f1");
  std::vector<std::string> models;
  std::vector<std::vector<RunMetrics>> runs;
  for (int row = 2; std::getline(f, line); ++row) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != expected.size()) throw DataError(DataError::Kind::invalid, path + ": bad row " + std::to_string(row));
    auto it = std::find(models.begin(), models.end(), cells[0]);
    if (it == models.end()) {
      models.push_back(cells[0]);
      runs.emplace_back();
      it = models.end() - 1;
    }
    RunMetrics r;
    try {
      for (std::size_t k = 0; k < r.values.size(); ++k) r.values[k] = std::stod(cells[k + 2]);
    } catch (const std::exception&) {
      throw DataError(DataError::Kind::invalid, path + ": non-numeric value in row " + std::to_string(row));
    }
    runs[it - models.begin()].push_back(r);
  }
  if (models.size() < 2) throw DataError(DataError::Kind::invalid, path + ": need at least two models");
  for (std::size_t i = 0; i < models.size(); ++i)
    if (runs[i].size() != runs[0].size() || runs[i].size() < 2)
      throw DataError(DataError::Kind::invalid, path + ": every model needs the same number of runs (at least two)");
  const ComparisonReport rep = compare_models(models, runs, ctx.config.at("alpha").get<double>());
  write_json(ctx, ctx.out / "comparison.json", rep);
  write_file(ctx, ctx.out / "comparison.csv", comparison_csv(rep));
  std::vector<MetricSummary> summaries;
  nlohmann::json summary = nlohmann::json::object();
  for (std::size_t i = 0; i < models.size(); ++i) {
    summaries.push_back(summarize(runs[i]));
    summary[models[i]] = summaries.back();
  }
  write_json(ctx, ctx.out / "summary.json", summary);
  write_file(ctx, ctx.out / "summary.svg", summary_bar_svg(models, summaries));
  for (const auto& mc : rep.metrics)
    ctx.info("stats: " + mc.metric + " ANOVA F " + fixed(mc.anova.statistic, 3) + " p " + fixed(mc.anova.p, 5));
}

}  // namespace pasfuse::cli

#include "pasfuse/trainer/train.hpp"

#include "pasfuse/version.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace pasfuse {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348;
constexpr std::uint64_t kDropoutStream = 0x4452;

bool is_unimodal(ModelKind k) { return k != ModelKind::fusion; }

LossOptions train_loss_options(const TrainConfig& c, const std::vector<Item>& train_items) {
  LossOptions o;
  if (!is_unimodal(c.model)) return o;
  o.label_smoothing = c.label_smoothing;
  if (c.class_weights) {
    std::vector<Index> counts(2, 0);
    for (const auto& it : train_items)
      if (!it.force_augment) ++counts[it.label];
    o.class_weights = class_weights(counts);
  }
  return o;
}

FTensor batch_loss(ModelKind kind, const ModelOutput& out, std::span<const int> targets, const LossOptions& o) {
  if (kind == ModelKind::fusion) return bce(out.probability, targets);
  return cross_entropy(out.logits, targets, o);
}

double accuracy(const Predictions& p) {
  if (p.labels.empty()) return 0;
  Index correct = 0;
  for (std::size_t i = 0; i < p.labels.size(); ++i) correct += (p.scores[i] >= 0.5 ? 1 : 0) == p.labels[i];
  return static_cast<double>(correct) / static_cast<double>(p.labels.size());
}

bool both_classes(const std::vector<int>& labels) {
  return std::find(labels.begin(), labels.end(), 0) != labels.end() &&
         std::find(labels.begin(), labels.end(), 1) != labels.end();
}

Item to_item(const Sample& s) {
  Item it;
  it.id = s.patient_id;
  (s.modality == Modality::mri ? it.mri : it.us) = s.uri;
  it.label = s.label;
  it.force_augment = s.force_augment;
  return it;
}

std::vector<Item> training_items(const TrainConfig& c, const SampleManifest& m) {
  if (!is_unimodal(c.model)) return items_for(c.model, m, Split::train);
  const Modality mod = c.model == ModelKind::mri ? Modality::mri : Modality::us;
  std::vector<Sample> train;
  for (const auto& s : m.select(Split::train))
    if (s.modality == mod) train.push_back(s);
  if (c.oversample && !train.empty()) train = oversample_minority(train, c.seed);
  std::vector<Item> out;
  for (const auto& s : train) out.push_back(to_item(s));
  return out;
}

void warm_start(Model& model, const TrainConfig& c) {
  for (const auto& path : {c.warm_start_mri, c.warm_start_us}) {
    if (path.empty()) continue;
    const Checkpoint ck = load_checkpoint(path);
    if (model.parameters().load_matching(ck.weights) == 0)
      throw FormatError("warm start " + path + " shares no parameters with the fusion model");
  }
}

std::string epoch_csv_row(const EpochStats& e) {
  std::ostringstream os;
  os.precision(10);
  os << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_accuracy << ',' << e.lr << '\n';
  return os.str();
}

}  // namespace

TrainConfig TrainConfig::defaults(ModelKind kind, const std::string& profile) {
  TrainConfig c;
  c.model = kind;
  c.profile = ScaleProfile::named(profile);
  const bool paper = profile == "paper";
  switch (kind) {
    case ModelKind::mri:
      c.dropout = 0.5;
      c.oversample = true;
      c.epochs = paper ? 100 : 10;
      break;
    case ModelKind::us:
      c.dropout = 0.0;
      c.label_smoothing = 0.1;
      c.class_weights = true;
      c.epochs = paper ? 200 : 10;
      break;
    case ModelKind::fusion:
      c.dropout = 0.3;
      c.scheduler.enabled = false;
      c.augment = false;
      c.epochs = paper ? 100 : 10;
      break;
  }
  return c;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(lr > 0)) throw std::invalid_argument("lr must be positive");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (label_smoothing < 0 || label_smoothing >= 1) throw std::invalid_argument("label_smoothing must be in [0,1)");
  if (dropout < 0 || dropout >= 1) throw std::invalid_argument("dropout must be in [0,1)");
  if (model != ModelKind::fusion && (!warm_start_mri.empty() || !warm_start_us.empty()))
    throw std::invalid_argument("warm_start applies to the fusion model only");
  profile.validate();
  if (scheduler.enabled) PlateauScheduler check(scheduler);
}

void to_json(nlohmann::json& j, const SchedulerConfig& c) {
  j = {{"enabled", c.enabled}, {"factor", c.factor}, {"patience", c.patience},
       {"min_lr", c.min_lr}, {"threshold", c.threshold}};
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"model", to_string(c.model)}, {"profile", c.profile}, {"lr", c.lr}, {"batch_size", c.batch_size},
       {"epochs", c.epochs}, {"label_smoothing", c.label_smoothing}, {"dropout", c.dropout},
       {"scheduler", c.scheduler}, {"augment", c.augment}, {"oversample", c.oversample},
       {"class_weights", c.class_weights}, {"seed", c.seed}, {"warm_start_mri", c.warm_start_mri},
       {"warm_start_us", c.warm_start_us}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::set<std::string> keys{"model", "profile", "lr", "batch_size", "epochs", "label_smoothing",
                                          "dropout", "scheduler", "augment", "oversample", "class_weights",
                                          "seed", "warm_start_mri", "warm_start_us"};
  for (const auto& [k, v] : j.items())
    if (!keys.count(k)) throw std::invalid_argument("unknown trainer key '" + k + "'");
  const ModelKind kind = model_kind_from_string(j.value("model", std::string("mri")));
  std::string profile_name = "micro";
  if (j.contains("profile")) {
    const auto& p = j.at("profile");
    profile_name = p.is_string() ? p.get<std::string>() : p.value("name", std::string("micro"));
  }
  c = TrainConfig::defaults(kind, profile_name);
  if (j.contains("profile") && j.at("profile").is_object()) j.at("profile").get_to(c.profile);
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  take("lr", c.lr);
  take("batch_size", c.batch_size);
  take("epochs", c.epochs);
  take("label_smoothing", c.label_smoothing);
  take("dropout", c.dropout);
  take("augment", c.augment);
  take("oversample", c.oversample);
  take("class_weights", c.class_weights);
  take("seed", c.seed);
  take("warm_start_mri", c.warm_start_mri);
  take("warm_start_us", c.warm_start_us);
  if (j.contains("scheduler")) {
    const auto& s = j.at("scheduler");
    for (const auto& [k, v] : s.items())
      if (k != "enabled" && k != "factor" && k != "patience" && k != "min_lr" && k != "threshold")
        throw std::invalid_argument("unknown scheduler key '" + k + "'");
    c.scheduler.enabled = s.value("enabled", c.scheduler.enabled);
    c.scheduler.factor = s.value("factor", c.scheduler.factor);
    c.scheduler.patience = s.value("patience", c.scheduler.patience);
    c.scheduler.min_lr = s.value("min_lr", c.scheduler.min_lr);
    c.scheduler.threshold = s.value("threshold", c.scheduler.threshold);
  }
}

void to_json(nlohmann::json& j, const RunRecord& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs)
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss},
                      {"val_accuracy", e.val_accuracy}, {"lr", e.lr}});
  j = {{"model", r.model}, {"seed", r.seed}, {"epochs", epochs}, {"best_epoch", r.best_epoch},
       {"best_val_accuracy", r.best_val_accuracy}, {"checkpoint", r.checkpoint}};
  if (r.test) j["test"] = *r.test;
}

int best_index(const std::vector<double>& values) {
  int best = -1;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (best < 0 || values[i] > values[best]) best = static_cast<int>(i);
  return best;
}

std::vector<Item> items_for(ModelKind kind, const SampleManifest& manifest, Split split) {
  std::vector<Item> out;
  if (kind == ModelKind::fusion) {
    for (const auto& p : manifest.pairs(split)) out.push_back({p.patient_id, p.mri, p.us, p.label, false});
    return out;
  }
  const Modality mod = kind == ModelKind::mri ? Modality::mri : Modality::us;
  for (const auto& s : manifest.select(split))
    if (s.modality == mod) out.push_back(to_item(s));
  return out;
}

ModelInput make_batch(ModelKind kind, const std::vector<const Item*>& items, SampleStore& store,
                      const AugmentFn& augment) {
  const bool need_mri = kind != ModelKind::us, need_us = kind != ModelKind::mri;
  std::vector<Volume> vols;
  std::vector<Image> imgs;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Item& it = *items[i];
    std::optional<Rng> rng = augment ? augment(i) : std::nullopt;
    if (need_mri) {
      if (it.mri.empty()) throw DataError(DataError::Kind::invalid, "item " + it.id + " has no MRI input");
      const Volume& v = store.volume(it.mri);
      if (rng) {
        Rng r = rng->split(0);
        vols.push_back(augment_mri(v, r));
      } else {
        vols.push_back(v);
      }
    }
    if (need_us) {
      if (it.us.empty()) throw DataError(DataError::Kind::invalid, "item " + it.id + " has no US input");
      const Image& img = store.image(it.us);
      if (rng) {
        Rng r = rng->split(1);
        imgs.push_back(augment_us(img, r));
      } else {
        imgs.push_back(img);
      }
    }
  }
  ModelInput in;
  if (need_mri) in.volume = stack_volumes(vols);
  if (need_us) in.image = stack_images(imgs);
  return in;
}

Predictions predict(Model& model, const std::vector<Item>& items, SampleStore& store, Index batch_size,
                    const LossOptions& loss_opts) {
  NoGradGuard no_grad;
  Predictions p;
  double loss_sum = 0;
  const ModelKind kind = model.kind();
  for (std::size_t start = 0; start < items.size(); start += batch_size) {
    const std::size_t end = std::min(items.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const Item*> batch;
    std::vector<int> targets;
    for (std::size_t i = start; i < end; ++i) {
      batch.push_back(&items[i]);
      targets.push_back(items[i].label);
    }
    ForwardContext ctx;
    ctx.mode = Mode::eval;
    const ModelOutput out = model.forward(make_batch(kind, batch, store), ctx);
    loss_sum += static_cast<double>(batch_loss(kind, out, targets, loss_opts).item()) * batch.size();
    const Index cols = out.probability.dim(-1);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      p.ids.push_back(batch[b]->id);
      p.labels.push_back(batch[b]->label);
      p.scores.push_back(out.probability.data()[b * cols + (cols - 1)]);
    }
  }
  p.loss = items.empty() ? 0.0 : loss_sum / static_cast<double>(items.size());
  return p;
}

TrainResult train(const TrainConfig& config, const SampleManifest& manifest, const TrainOptions& options) {
  config.validate();
  const ModelKind kind = config.model;
  ModelOptions mo;
  mo.mri_dropout = config.dropout;
  mo.fusion_dropout = config.dropout;
  std::unique_ptr<Model> model = make_model(kind, config.profile, mo);
  model->parameters().initialize(config.seed);
  if (kind == ModelKind::fusion) warm_start(*model, config);

  const std::vector<Item> train_items = training_items(config, manifest);
  const std::vector<Item> val_items = items_for(kind, manifest, Split::val);
  if (train_items.empty()) throw DataError(DataError::Kind::invalid, "training split is empty");
  if (val_items.empty()) throw DataError(DataError::Kind::invalid, "validation split is empty");

  SampleStore store(manifest, config.profile.mri_input, config.profile.us_input);
  const LossOptions loss_opts = train_loss_options(config, train_items);
  Adam adam(model->parameters());
  PlateauScheduler scheduler(config.scheduler);

  std::ofstream log;
  std::filesystem::path ckpt_path;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    log.open(options.out_dir / "epochs.csv", std::ios::binary);
    log << "epoch,train_loss,val_loss,val_accuracy,lr\n";
    ckpt_path = options.out_dir / "best.ckpt";
  }

  RunRecord rec;
  rec.model = to_string(kind);
  rec.seed = config.seed;
  TensorDict best_state;
  std::vector<double> val_acc_hist, val_loss_hist;
  const Rng base(config.seed);
  double lr = config.lr;
  const std::size_t n = train_items.size();
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = base.split(kShuffleStream).split(static_cast<std::uint64_t>(epoch));
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle.below(i + 1)]);
    Rng dropout_rng = base.split(kDropoutStream).split(static_cast<std::uint64_t>(epoch));

    double loss_sum = 0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      // A lone trailing sample would give batch norm a single value per channel.
      if (end - start == 1 && n > 1) break;
      std::vector<const Item*> batch;
      std::vector<std::size_t> ordinals;
      std::vector<int> targets;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(&train_items[order[i]]);
        ordinals.push_back(order[i]);
        targets.push_back(train_items[order[i]].label);
      }
      AugmentFn aug = [&](std::size_t b) -> std::optional<Rng> {
        const Item& it = *batch[b];
        if (!(config.augment || it.force_augment)) return std::nullopt;
        return sample_rng(config.seed, it.id, epoch, ordinals[b]);
      };
      const ModelInput in = make_batch(kind, batch, store, aug);
      ForwardContext ctx;
      ctx.mode = Mode::train;
      ctx.rng = &dropout_rng;
      const ModelOutput out = model->forward(in, ctx);
      const FTensor loss = batch_loss(kind, out, targets, loss_opts);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        Tape<float>::current().clear();
        std::string ids;
        for (const Item* it : batch) ids += (ids.empty() ? "" : ",") + it->id;
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch starting " +
                           std::to_string(start) + " (samples " + ids + ", lr " + std::to_string(lr) + ")");
      }
      model->parameters().zero_grad();
      backward(loss);
      adam.step(lr);
      loss_sum += lv * static_cast<double>(batch.size());
      seen += batch.size();
    }

    const Predictions val = predict(*model, val_items, store, config.batch_size, loss_opts);
    EpochStats st;
    st.epoch = epoch;
    st.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    st.val_loss = val.loss;
    st.val_accuracy = accuracy(val);
    st.lr = lr;
    rec.epochs.push_back(st);
    val_acc_hist.push_back(st.val_accuracy);
    val_loss_hist.push_back(st.val_loss);
    if (!std::isfinite(st.val_loss)) throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));

    if (rec.best_epoch < 0 || st.val_accuracy > rec.best_val_accuracy) {
      rec.best_epoch = epoch;
      rec.best_val_accuracy = st.val_accuracy;
      best_state = model->parameters().state();
      if (!ckpt_path.empty()) {
        CheckpointMeta meta;
        meta.model = rec.model;
        meta.profile = config.profile;
        meta.version = kVersion;
        meta.seed = config.seed;
        meta.epoch = epoch;
        meta.val_accuracy = val_acc_hist;
        meta.val_loss = val_loss_hist;
        meta.extra = {{"config", config}};
        save_checkpoint(ckpt_path, *model, meta, adam.state());
      }
    }
    if (log.is_open()) log << epoch_csv_row(st) << std::flush;
    if (options.on_epoch) options.on_epoch(st);
    lr = scheduler.step(st.val_loss, lr);
  }

  model->parameters().load_state(best_state);
  rec.checkpoint = ckpt_path.string();
  const std::vector<Item> test_items = items_for(kind, manifest, Split::test);
  if (!test_items.empty()) {
    const Predictions tp = predict(*model, test_items, store, config.batch_size);
    if (both_classes(tp.labels)) rec.test = evaluate(tp.labels, tp.scores);
  }
  return {std::move(rec), std::move(model)};
}

MultiRunResult multi_run(const TrainConfig& config, const SampleManifest& manifest, int n_runs,
                         const TrainOptions& options) {
  if (n_runs < 1) throw std::invalid_argument("n_runs must be >= 1");
  MultiRunResult out;
  std::vector<RunMetrics> metrics;
  for (int i = 0; i < n_runs; ++i) {
    TrainConfig c = config;
    c.seed = config.seed + static_cast<std::uint64_t>(i);
    TrainOptions o = options;
    if (!options.out_dir.empty()) o.out_dir = options.out_dir / ("run" + std::to_string(i));
    TrainResult r = train(c, manifest, o);
    if (r.record.test) metrics.push_back(RunMetrics::from(*r.record.test));
    out.runs.push_back(std::move(r.record));
  }
  if (!metrics.empty()) out.summary = summarize(metrics);
  return out;
}

void to_json(nlohmann::json& j, const ProtocolConfig& c) {
  j = {{"mri", c.mri}, {"us", c.us}, {"fusion", c.fusion}, {"runs", c.runs}, {"seed", c.seed},
       {"split_seed", c.split_seed}, {"unimodal_ratios", c.unimodal_ratios},
       {"paired_ratios", c.paired_ratios}, {"warm_start", c.warm_start}};
}

void from_json(const nlohmann::json& j, ProtocolConfig& c) {
  static const std::set<std::string> keys{"mri", "us", "fusion", "runs", "seed", "split_seed",
                                          "unimodal_ratios", "paired_ratios", "warm_start"};
  for (const auto& [k, v] : j.items())
    if (!keys.count(k)) throw std::invalid_argument("unknown protocol key '" + k + "'");
  c = ProtocolConfig{};
  for (auto [key, dst] : {std::pair{"mri", &c.mri}, std::pair{"us", &c.us}, std::pair{"fusion", &c.fusion}}) {
    nlohmann::json sub = j.value(key, nlohmann::json::object());
    if (sub.contains("model") && sub["model"] != key)
      throw std::invalid_argument(std::string("protocol entry '") + key + "' names another model");
    sub["model"] = key;
    sub.get_to(*dst);
  }
  c.runs = j.value("runs", c.runs);
  c.seed = j.value("seed", c.seed);
  c.split_seed = j.value("split_seed", c.split_seed);
  if (j.contains("unimodal_ratios")) j.at("unimodal_ratios").get_to(c.unimodal_ratios);
  if (j.contains("paired_ratios")) j.at("paired_ratios").get_to(c.paired_ratios);
  c.warm_start = j.value("warm_start", c.warm_start);
}

namespace {

bool unassigned(const SampleManifest& m) {
  return std::any_of(m.samples.begin(), m.samples.end(), [](const Sample& s) { return s.split == Split::unassigned; });
}

SampleManifest ensure_split(const SampleManifest& m, const SplitRatios& r, std::uint64_t seed) {
  if (!unassigned(m)) return m;
  SampleManifest out = stratified_split(m, r, seed);
  out.base_dir = m.base_dir;
  return out;
}

double max_branch_delta(const Model& fusion, const std::vector<std::string>& warm_paths) {
  double delta = 0;
  for (const auto& path : warm_paths) {
    const Checkpoint ck = load_checkpoint(path);
    for (const auto& e : fusion.parameters().entries()) {
      auto it = ck.weights.find(e.name);
      if (it == ck.weights.end() || it->second.size() != e.value.size()) continue;
      delta = std::max(delta, static_cast<double>((e.value.data() - it->second.data()).cwiseAbs().maxCoeff()));
    }
  }
  return delta;
}

}  // namespace

ProtocolResult comparative_protocol(const SampleManifest& mri_manifest_in, const SampleManifest& us_manifest_in,
                                    const SampleManifest& paired_in, const ProtocolConfig& config,
                                    const std::filesystem::path& out_dir,
                                    const std::function<void(const std::string&)>& log) {
  if (config.runs < 1) throw std::invalid_argument("protocol runs must be >= 1");
  if (out_dir.empty()) throw std::invalid_argument("comparative protocol needs an output directory");
  if (paired_in.pairing.empty()) throw DataError(DataError::Kind::invalid, "paired manifest has no pairing");
  const SampleManifest mri_m = ensure_split(mri_manifest_in, config.unimodal_ratios, config.split_seed);
  const SampleManifest us_m = ensure_split(us_manifest_in, config.unimodal_ratios, config.split_seed);
  const SampleManifest paired = ensure_split(paired_in, config.paired_ratios, config.split_seed);

  const std::vector<Item> test_items = items_for(ModelKind::fusion, paired, Split::test);
  if (test_items.empty()) throw DataError(DataError::Kind::invalid, "paired manifest has no test pairs");
  std::set<std::string> test_patients;
  for (const auto& it : test_items) test_patients.insert(it.id);
  for (const SampleManifest* m : {&mri_m, &us_m})
    for (const auto& s : m->samples)
      if (s.split != Split::test && test_patients.count(s.patient_id))
        throw DataError(DataError::Kind::invalid,
                        "patient " + s.patient_id + " is in the shared test set and in unimodal training data");

  mri_m.save(out_dir / "manifests" / "mri.json");
  us_m.save(out_dir / "manifests" / "us.json");
  paired.save(out_dir / "manifests" / "paired.json");

  SampleStore store(paired, config.fusion.profile.mri_input, config.fusion.profile.us_input);
  ProtocolResult res;
  for (const auto& it : test_items) res.test_ids.push_back(it.id);
  res.shared_test.resize(3);
  res.records.resize(3);
  std::vector<std::vector<RunMetrics>> metrics(3);
  auto note = [&](const std::string& s) {
    if (log) log(s);
  };

  for (int run = 0; run < config.runs; ++run) {
    const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(run);
    const auto run_dir = out_dir / ("run" + std::to_string(run));
    auto run_one = [&](TrainConfig c, const SampleManifest& m, const char* name, std::size_t slot) {
      c.seed = seed;
      note("run " + std::to_string(run) + ": training " + name);
      TrainOptions o;
      o.out_dir = run_dir / name;
      TrainResult r = train(c, m, o);
      const Predictions p = predict(*r.model, test_items, store, c.batch_size);
      const MetricsReport rep = evaluate(p.labels, p.scores);
      note(std::string(name) + " best val acc " + std::to_string(r.record.best_val_accuracy) + ", shared test acc " +
           std::to_string(rep.macro.accuracy));
      res.shared_test[slot].push_back(rep);
      metrics[slot].push_back(RunMetrics::from(rep));
      res.records[slot].push_back(r.record);
      return r;
    };
    const TrainResult mri = run_one(config.mri, mri_m, "mri", 1);
    const TrainResult us = run_one(config.us, us_m, "us", 2);
    TrainConfig fc = config.fusion;
    std::vector<std::string> warm;
    if (config.warm_start) {
      fc.warm_start_mri = mri.record.checkpoint;
      fc.warm_start_us = us.record.checkpoint;
      warm = {fc.warm_start_mri, fc.warm_start_us};
    }
    const TrainResult fusion = run_one(fc, paired, "fusion", 0);
    res.branch_delta.push_back(warm.empty() ? 0.0 : max_branch_delta(*fusion.model, warm));
  }

  if (config.runs >= 2) res.comparison = compare_models(res.models, metrics);
  for (const auto& m : metrics) res.summaries.push_back(summarize(m));
  return res;
}

void to_json(nlohmann::json& j, const ProtocolResult& r) {
  j = {{"models", r.models}, {"test_ids", r.test_ids}, {"branch_delta", r.branch_delta}};
  j["comparison"] = r.comparison ? nlohmann::json(*r.comparison) : nlohmann::json(nullptr);
  nlohmann::json per = nlohmann::json::object();
  for (std::size_t m = 0; m < r.models.size(); ++m) {
    nlohmann::json runs = nlohmann::json::array();
    for (std::size_t i = 0; i < r.shared_test[m].size(); ++i) {
      nlohmann::json rec = r.records[m][i];
      rec["shared_test"] = r.shared_test[m][i];
      runs.push_back(rec);
    }
    per[r.models[m]] = {{"summary", r.summaries[m]}, {"runs", runs}};
  }
  j["results"] = per;
}

}  // namespace pasfuse

#include "pasfuse/synthgen/synthgen.hpp"
#include "pasfuse/trainer/train.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>

using namespace pasfuse;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("pasfuse_trainer_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Small redundant-mode dataset (both modalities carry the signal), split
// 60:15:25 by patient.
SampleManifest small_dataset(const std::string& name, Index pairs, std::uint64_t seed) {
  SynthSpec s;
  s.n_pairs = pairs;
  s.mode = SynthMode::redundant;
  s.seed = seed;
  const auto dir = temp_dir(name);
  SampleManifest m = generate_dataset(s, dir);
  SampleManifest split = stratified_split(m, {0.6, 0.15, 0.25}, seed);
  split.base_dir = m.base_dir;
  return split;
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST_CASE("adam single step closed form") {
  Buffer<double> w = Buffer<double>::Zero(1), g = Buffer<double>::Ones(1);
  Buffer<double> m = Buffer<double>::Zero(1), v = Buffer<double>::Zero(1);
  adam_step(w, g, m, v, 1, 1e-4);
  CHECK(std::abs(w[0] - (-1e-4 / (1.0 + 1e-8))) <= 1e-9);
  CHECK(m[0] == doctest::Approx(0.1));
  CHECK(v[0] == doctest::Approx(0.001));
}

TEST_CASE("adam matches the closed form over random states") {
  Rng rng(21);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const double w0 = rng.uniform(-2, 2), g = rng.uniform(-3, 3);
    const double m0 = rng.uniform(-1, 1), v0 = rng.uniform(0, 2);
    const long t = 1 + static_cast<long>(rng.below(200));
    const double lr = std::pow(10.0, rng.uniform(-5, -1));
    Buffer<double> w(1), gb(1), m(1), v(1);
    w << w0;
    gb << g;
    m << m0;
    v << v0;
    adam_step(w, gb, m, v, t, lr);
    const double m1 = 0.9 * m0 + 0.1 * g;
    const double v1 = 0.999 * v0 + 0.001 * g * g;
    const double mhat = m1 / (1 - std::pow(0.9, t));
    const double vhat = v1 / (1 - std::pow(0.999, t));
    const double expect = w0 - lr * mhat / (std::sqrt(vhat) + 1e-8);
    worst = std::max({worst, std::abs(w[0] - expect), std::abs(m[0] - m1), std::abs(v[0] - v1)});
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("adam zero gradient") {
  Buffer<double> w = Buffer<double>::Constant(3, 0.5), g = Buffer<double>::Zero(3);
  Buffer<double> m = Buffer<double>::Zero(3), v = Buffer<double>::Zero(3);
  adam_step(w, g, m, v, 1, 1e-3);
  CHECK(w.isApproxToConstant(0.5, 0));
  Buffer<double> m2 = Buffer<double>::Constant(3, 0.2), v2 = Buffer<double>::Constant(3, 0.4);
  adam_step(w, g, m2, v2, 2, 1e-3);
  CHECK(m2[0] == doctest::Approx(0.18));
  CHECK(v2[0] == doctest::Approx(0.3996));
  Buffer<double> bad = Buffer<double>::Zero(2);
  CHECK_THROWS_AS(adam_step(w, bad, m, v, 3, 1e-3), ShapeError);
}

TEST_CASE("adam state round trip") {
  auto model = make_model(ModelKind::us, ScaleProfile::micro());
  model->parameters().initialize(1);
  Adam a(model->parameters());
  model->parameters().zero_grad();
  for (const auto& e : model->parameters().entries()) FTensor(e.value).grad().setConstant(0.01f);
  a.step(1e-3);
  const TensorDict st = a.state();
  Adam b(model->parameters());
  b.load_state(st);
  CHECK(b.steps() == 1);
  CHECK(b.state().at("m/us.head.fc.weight").data() == st.at("m/us.head.fc.weight").data());
  TensorDict broken = st;
  broken.erase("step");
  CHECK_THROWS_AS(b.load_state(broken), FormatError);
}

TEST_CASE("plateau scheduler traces") {
  PlateauScheduler improving;
  double lr = 1e-4;
  for (int e = 0; e < 30; ++e) lr = improving.step(1.0 - 0.01 * e, lr);
  CHECK(lr == 1e-4);

  PlateauScheduler flat;
  lr = 1e-4;
  std::vector<double> trace;
  for (int e = 0; e < 11; ++e) {
    lr = flat.step(0.7, lr);
    trace.push_back(lr);
  }
  CHECK(trace[9] == 1e-4);
  CHECK(trace[10] == doctest::Approx(1e-5));

  PlateauScheduler floor;
  lr = 1e-4;
  for (int e = 0; e < 200; ++e) lr = floor.step(0.7, lr);
  CHECK(lr == doctest::Approx(1e-7));
  CHECK(lr >= 1e-7);

  SchedulerConfig off;
  off.enabled = false;
  PlateauScheduler disabled(off);
  lr = 1e-4;
  for (int e = 0; e < 50; ++e) lr = disabled.step(0.7, lr);
  CHECK(lr == 1e-4);
  SchedulerConfig bad;
  bad.factor = 1.5;
  CHECK_THROWS(PlateauScheduler(bad));
}

TEST_CASE("best epoch is the earliest maximum") {
  CHECK(best_index({0.5, 0.7, 0.7, 0.6}) == 1);
  CHECK(best_index({}) == -1);
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(30));
    std::vector<double> v(n);
    for (auto& x : v) x = static_cast<double>(rng.below(5)) / 4.0;
    const int b = best_index(v);
    const double mx = *std::max_element(v.begin(), v.end());
    CHECK(v[b] == mx);
    for (int i = 0; i < b; ++i) CHECK(v[i] < mx);
  }
}

TEST_CASE("train config json") {
  const auto us = TrainConfig::defaults(ModelKind::us);
  CHECK(us.label_smoothing == 0.1);
  CHECK(us.class_weights);
  CHECK(us.lr == 1e-4);
  CHECK(us.batch_size == 8);
  const auto fusion = TrainConfig::defaults(ModelKind::fusion, "paper");
  CHECK_FALSE(fusion.scheduler.enabled);
  CHECK(fusion.dropout == 0.3);
  CHECK(fusion.epochs == 100);
  CHECK(TrainConfig::defaults(ModelKind::us, "paper").epochs == 200);
  CHECK(TrainConfig::defaults(ModelKind::mri).oversample);

  TrainConfig c = nlohmann::json{{"model", "us"}, {"lr", 0.001}, {"scheduler", {{"patience", 3}}}};
  CHECK(c.lr == 0.001);
  CHECK(c.scheduler.patience == 3);
  CHECK(c.label_smoothing == 0.1);
  nlohmann::json j = c;
  TrainConfig back = j;
  CHECK(nlohmann::json(back) == j);
  CHECK_THROWS(TrainConfig(nlohmann::json{{"model", "us"}, {"learning_rate", 0.1}}));
  TrainConfig neg = TrainConfig::defaults(ModelKind::mri);
  neg.batch_size = 0;
  CHECK_THROWS(neg.validate());
  ProtocolConfig pc = nlohmann::json{{"runs", 2}, {"fusion", {{"epochs", 3}}}};
  CHECK(pc.runs == 2);
  CHECK(pc.fusion.model == ModelKind::fusion);
  CHECK(pc.fusion.epochs == 3);
  CHECK_FALSE(pc.fusion.scheduler.enabled);
}

TEST_CASE("single step decreases batch loss") {
  const SampleManifest m = small_dataset("step", 24, 5);
  const ScaleProfile p = ScaleProfile::micro();
  SampleStore store(m, p.mri_input, p.us_input);
  for (ModelKind kind : {ModelKind::mri, ModelKind::us, ModelKind::fusion}) {
    std::vector<Item> items = items_for(kind, m, Split::train);
    items.resize(8);
    std::vector<const Item*> batch;
    std::vector<int> targets;
    for (const auto& it : items) {
      batch.push_back(&it);
      targets.push_back(it.label);
    }
    const ModelInput in = make_batch(kind, batch, store);
    int decreased = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto model = make_model(kind, p);
      model->parameters().initialize(seed);
      Adam adam(model->parameters());
      auto loss_of = [&] {
        Rng drop(seed + 100);
        ForwardContext ctx;
        ctx.mode = Mode::train;
        ctx.rng = &drop;
        const ModelOutput out = model->forward(in, ctx);
        return kind == ModelKind::fusion ? bce(out.probability, std::span<const int>(targets))
                                         : cross_entropy(out.logits, std::span<const int>(targets));
      };
      const FTensor before = loss_of();
      model->parameters().zero_grad();
      backward(before);
      adam.step(1e-4);
      double after;
      {
        NoGradGuard ng;
        after = loss_of().item();
      }
      decreased += after < before.item();
    }
    INFO(to_string(kind));
    CHECK(decreased >= 9);
  }
}

TEST_CASE("training progresses, checkpoints and is deterministic") {
  const SampleManifest m = small_dataset("train", 32, 9);
  TrainConfig c = TrainConfig::defaults(ModelKind::us);
  c.epochs = 5;
  c.lr = 1e-3;
  c.seed = 3;
  const auto dir_a = temp_dir("run_a"), dir_b = temp_dir("run_b");
  int callbacks = 0;
  TrainOptions oa;
  oa.out_dir = dir_a;
  oa.on_epoch = [&](const EpochStats&) { ++callbacks; };
  TrainResult a = train(c, m, oa);
  CHECK(callbacks == 5);
  REQUIRE(a.record.epochs.size() == 5);
  CHECK(a.record.epochs.back().train_loss < a.record.epochs.front().train_loss);
  std::vector<double> acc;
  for (const auto& e : a.record.epochs) acc.push_back(e.val_accuracy);
  CHECK(a.record.best_epoch == best_index(acc));
  CHECK(a.record.test.has_value());
  CHECK(std::filesystem::exists(dir_a / "epochs.csv"));

  TrainOptions ob;
  ob.out_dir = dir_b;
  TrainResult b = train(c, m, ob);
  CHECK(nlohmann::json(b.record.epochs.back().train_loss) == nlohmann::json(a.record.epochs.back().train_loss));
  CHECK(file_bytes(dir_a / "best.ckpt") == file_bytes(dir_b / "best.ckpt"));
  CHECK(file_bytes(dir_a / "epochs.csv") == file_bytes(dir_b / "epochs.csv"));

  // Restored checkpoint reproduces the recorded validation accuracy.
  auto restored = restore_model(dir_a / "best.ckpt");
  SampleStore store(m, c.profile.mri_input, c.profile.us_input);
  const Predictions val = predict(*restored, items_for(ModelKind::us, m, Split::val), store, 8);
  Index correct = 0;
  for (std::size_t i = 0; i < val.labels.size(); ++i) correct += (val.scores[i] >= 0.5) == (val.labels[i] == 1);
  CHECK(static_cast<double>(correct) / val.labels.size() == a.record.best_val_accuracy);
  const Predictions direct = predict(*a.model, items_for(ModelKind::us, m, Split::val), store, 8);
  CHECK(direct.scores == val.scores);
}

TEST_CASE("empty splits and multi_run summary") {
  SampleManifest m = small_dataset("multi", 20, 2);
  TrainConfig c = TrainConfig::defaults(ModelKind::us);
  c.epochs = 1;
  const MultiRunResult one = multi_run(c, m, 1);
  REQUIRE(one.runs.size() == 1);
  CHECK(one.summary.runs == 1);
  CHECK(one.summary.sd[0] == 0.0);
  const MultiRunResult two = multi_run(c, m, 2);
  CHECK(two.runs[1].seed == c.seed + 1);
  const double mean = (two.runs[0].test->macro.accuracy + two.runs[1].test->macro.accuracy) / 2;
  CHECK(std::abs(two.summary.mean[0] - mean) <= 1e-9);

  for (auto& s : m.samples)
    if (s.split == Split::val) s.split = Split::train;
  CHECK_THROWS_AS(train(c, m), DataError);
}

TEST_CASE("comparative protocol on a shared test set") {
  SynthSpec uni;
  uni.n_pairs = 30;
  uni.mode = SynthMode::redundant;
  uni.seed = 41;
  uni.modalities = SynthModalities::mri;
  uni.id_prefix = "M";
  const SampleManifest mri_m = generate_dataset(uni, temp_dir("proto_mri"));
  uni.modalities = SynthModalities::us;
  uni.id_prefix = "U";
  uni.seed = 42;
  const SampleManifest us_m = generate_dataset(uni, temp_dir("proto_us"));
  SynthSpec pairs;
  pairs.n_pairs = 24;
  pairs.seed = 43;
  pairs.id_prefix = "P";
  const SampleManifest paired = generate_dataset(pairs, temp_dir("proto_pairs"));

  ProtocolConfig pc;
  pc.runs = 2;
  for (TrainConfig* c : {&pc.mri, &pc.us, &pc.fusion}) {
    c->epochs = 1;
    c->lr = 1e-3;
  }
  const auto out = temp_dir("proto_out");
  const ProtocolResult r = comparative_protocol(mri_m, us_m, paired, pc, out);
  REQUIRE(r.shared_test.size() == 3);
  for (const auto& per_model : r.shared_test) {
    REQUIRE(per_model.size() == 2);
    for (const auto& rep : per_model) CHECK(rep.cm.total() == static_cast<Index>(r.test_ids.size()));
  }
  CHECK(r.test_ids.size() == 6);  // 24 pairs at 25%
  REQUIRE(r.branch_delta.size() == 2);
  for (double d : r.branch_delta) CHECK(d > 0.0);
  REQUIRE(r.comparison.has_value());
  CHECK(r.comparison->metrics.size() == 5);
  CHECK(std::filesystem::exists(out / "run1" / "fusion" / "best.ckpt"));

  ProtocolConfig cold = pc;
  cold.runs = 1;
  cold.warm_start = false;
  const ProtocolResult c = comparative_protocol(mri_m, us_m, paired, cold, temp_dir("proto_cold"));
  CHECK(c.shared_test[0].size() == 1);
  CHECK_FALSE(c.comparison.has_value());

  SampleManifest unpaired = paired;
  unpaired.pairing.clear();
  CHECK_THROWS_AS(comparative_protocol(mri_m, us_m, unpaired, pc, temp_dir("proto_bad")), DataError);
}

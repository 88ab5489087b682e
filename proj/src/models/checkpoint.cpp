#include "pasfuse/models/checkpoint.hpp"

#include "pasfuse/version.hpp"

#include <fstream>

namespace pasfuse {

namespace {
constexpr const char* kOptimPrefix = "optim/";
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  return p.replace_extension(".json");
}

void to_json(nlohmann::json& j, const CheckpointMeta& m) {
  j = nlohmann::json{{"model", m.model},
                     {"profile", m.profile},
                     {"version", m.version.empty() ? std::string(kVersion) : m.version},
                     {"seed", m.seed},
                     {"epoch", m.epoch},
                     {"val_accuracy", m.val_accuracy},
                     {"val_loss", m.val_loss},
                     {"extra", m.extra}};
}

void from_json(const nlohmann::json& j, CheckpointMeta& m) {
  j.at("model").get_to(m.model);
  j.at("profile").get_to(m.profile);
  m.version = j.value("version", std::string());
  m.seed = j.value("seed", std::uint64_t{0});
  m.epoch = j.value("epoch", -1);
  m.val_accuracy = j.value("val_accuracy", std::vector<double>{});
  m.val_loss = j.value("val_loss", std::vector<double>{});
  m.extra = j.value("extra", nlohmann::json::object());
}

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const CheckpointMeta& meta, const TensorDict& optimizer) {
  TensorDict all = model.parameters().state();
  for (const auto& [name, t] : optimizer) all[kOptimPrefix + name] = t;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  save_container(path, all);
  CheckpointMeta m = meta;
  if (m.model.empty()) m.model = to_string(model.kind());
  std::ofstream os(sidecar_path(path));
  if (!os) throw FormatError("cannot write " + sidecar_path(path).string());
  os << nlohmann::json(m).dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Checkpoint ck;
  for (auto& [name, t] : load_container(path)) {
    if (name.rfind(kOptimPrefix, 0) == 0) {
      ck.optimizer[name.substr(std::string(kOptimPrefix).size())] = t;
    } else {
      ck.weights[name] = t;
    }
  }
  std::ifstream is(sidecar_path(path));
  if (!is) throw FormatError("missing checkpoint sidecar " + sidecar_path(path).string());
  try {
    ck.meta = nlohmann::json::parse(is).get<CheckpointMeta>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad checkpoint sidecar: " + std::string(e.what()));
  }
  return ck;
}

std::unique_ptr<Model> restore_model(const std::filesystem::path& path,
                                     const ModelOptions& options) {
  Checkpoint ck = load_checkpoint(path);
  auto model = make_model(model_kind_from_string(ck.meta.model), ck.meta.profile, options);
  model->parameters().load_state(ck.weights);
  return model;
}

}  // namespace pasfuse

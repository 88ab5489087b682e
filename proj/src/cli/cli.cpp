#include "pasfuse/cli/cli.hpp"

#include "commands.hpp"
#include "pasfuse/datapipe/image.hpp"
#include "pasfuse/evalstats/metrics.hpp"
#include "pasfuse/models/profile.hpp"
#include "pasfuse/ndcore/rng.hpp"
#include "pasfuse/ndcore/serialize.hpp"
#include "pasfuse/synthgen/synthgen.hpp"
#include "pasfuse/trainer/train.hpp"
#include "pasfuse/version.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace pasfuse {

CliConfig parse_args(const std::vector<std::string>& args) {
  CLI::App app{"Multimodal MRI/ultrasound fusion pipeline", args.empty() ? "pasfuse" : args[0]};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  CliConfig cfg;
  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  std::string profile;
  for (const auto& name : kCommands) {
    static const std::map<std::string, std::string> about{
        {"synth", "Generate a synthetic paired dataset and split it"},
        {"preprocess", "Preprocess a manifest's files to the profile's input sizes"},
        {"train", "Train one model"},
        {"multirun", "Train one model over several seeds"},
        {"compare", "Three-way comparison: unimodal MRI, unimodal US and fusion on a shared test set"},
        {"eval", "Evaluate a checkpoint on a manifest split"},
        {"explain", "Grad-CAM heatmaps and overlays for a checkpoint"},
        {"stats", "ANOVA, paired t-tests and FDR correction over per-run metrics"}};
    CLI::App* sub = app.add_subcommand(name, about.at(name));
    sub->add_option("--config", config_path, "JSON config file")
        ->multi_option_policy(CLI::MultiOptionPolicy::Throw);
    sub->add_option("--out", out_dir, "Output directory")->required()->multi_option_policy(CLI::MultiOptionPolicy::Throw);
    sub->add_option("--seed", seed, "Base seed (overrides every seed in the config)")
        ->multi_option_policy(CLI::MultiOptionPolicy::Throw);
    sub->add_option("--profile", profile, "Scale profile")
        ->check(CLI::IsMember({"paper", "micro"}))
        ->multi_option_policy(CLI::MultiOptionPolicy::Throw);
    sub->add_flag("--deterministic", cfg.deterministic, "Single-threaded, seed-only execution");
    sub->add_option("--set", cfg.overrides, "Override a config value: dotted.key=value (repeatable)")
        ->allow_extra_args(false);
    sub->add_flag("-v,--verbose", "More progress output (repeatable)");
    sub->add_flag("-q,--quiet", "Errors only");
  }

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    cfg.help = true;
    cfg.help_text = app.help();
    for (auto* sub : app.get_subcommands()) cfg.help_text = sub->help();
    return cfg;
  } catch (const CLI::CallForAllHelp&) {
    cfg.help = true;
    cfg.help_text = app.help("", CLI::AppFormatMode::All);
    return cfg;
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }
  CLI::App* sub = app.get_subcommands().front();
  cfg.command = sub->get_name();
  cfg.config_path = config_path;
  cfg.out_dir = out_dir;
  if (sub->count("--seed")) cfg.seed = seed;
  if (sub->count("--profile")) cfg.profile = profile;
  cfg.verbosity = sub->count("--quiet") ? 0 : 1 + static_cast<int>(sub->count("--verbose"));
  for (const auto& o : cfg.overrides)
    if (o.find('=') == std::string::npos || o.front() == '=')
      throw UsageError("--set: malformed override '" + o + "' (expected key=value)");
  return cfg;
}

namespace {

std::string profile_name_of(const nlohmann::json& section, const nlohmann::json& top) {
  if (section.is_object() && section.contains("profile")) {
    const auto& p = section["profile"];
    if (p.is_string()) return p.get<std::string>();
    if (p.is_object() && p.contains("name")) return p["name"].get<std::string>();
  }
  return top.value("profile", std::string("micro"));
}

std::string string_at(const nlohmann::json& j, const char* section, const char* key, std::string fallback) {
  if (j.contains(section) && j[section].is_object() && j[section].contains(key) && j[section][key].is_string())
    return j[section][key].get<std::string>();
  return fallback;
}

nlohmann::json split_defaults(bool enabled, std::uint64_t seed) {
  return {{"enabled", enabled}, {"ratios", nullptr}, {"seed", seed}};
}

void set_keys(nlohmann::json& j, const std::set<std::string>& keys, const nlohmann::json& value) {
  if (!j.is_object()) return;
  for (auto& [k, v] : j.items()) {
    if (keys.count(k))
      v = value;
    else if (k != "profile")
      set_keys(v, keys, value);
  }
}

void set_profiles(nlohmann::json& j, const std::string& name, bool top) {
  if (!j.is_object()) return;
  for (auto& [k, v] : j.items()) {
    if (k == "profile")
      v = (top || v.is_string()) ? nlohmann::json(name) : nlohmann::json(ScaleProfile::named(name));
    else
      set_profiles(v, name, false);
  }
}

}  // namespace

nlohmann::json default_config(const std::string& command, const nlohmann::json& peek) {
  const std::uint64_t seed = peek.value("seed", std::uint64_t{0});
  const std::string top_profile = peek.value("profile", std::string("micro"));
  nlohmann::json d = {{"seed", seed}, {"profile", top_profile}};
  if (command == "synth") {
    const std::string prof = profile_name_of(peek.value("synth", nlohmann::json::object()), peek);
    SynthSpec s;
    s.profile = ScaleProfile::named(prof);
    s.seed = seed;
    d["synth"] = s;
    d["synth"]["profile"] = prof;
    d["split"] = split_defaults(true, seed);
  } else if (command == "preprocess") {
    d["data"] = {{"manifest", ""}};
    d["split"] = split_defaults(false, seed);
  } else if (command == "train" || command == "multirun") {
    const auto tr = peek.value("trainer", nlohmann::json::object());
    const ModelKind kind = model_kind_from_string(string_at(peek, "trainer", "model", "mri"));
    TrainConfig c = TrainConfig::defaults(kind, profile_name_of(tr, peek));
    c.seed = seed;
    d["trainer"] = c;
    d["trainer"]["profile"] = c.profile.name;
    d["data"] = {{"manifest", ""}};
    if (command == "multirun") d["runs"] = 5;
  } else if (command == "compare") {
    const auto pr = peek.value("protocol", nlohmann::json::object());
    ProtocolConfig pc;
    pc.seed = seed;
    pc.split_seed = seed;
    for (auto [key, cfg] : {std::pair{"mri", &pc.mri}, std::pair{"us", &pc.us}, std::pair{"fusion", &pc.fusion}}) {
      const auto sub = pr.value(key, nlohmann::json::object());
      *cfg = TrainConfig::defaults(model_kind_from_string(key), profile_name_of(sub, peek));
      cfg->seed = seed;
    }
    d["protocol"] = pc;
    for (auto [key, cfg] : {std::pair{"mri", &pc.mri}, std::pair{"us", &pc.us}, std::pair{"fusion", &pc.fusion}})
      d["protocol"][key]["profile"] = cfg->profile.name;
    d["data"] = {{"mri_manifest", ""}, {"us_manifest", ""}, {"paired_manifest", ""}};
  } else if (command == "eval") {
    d["data"] = {{"checkpoint", ""}, {"manifest", ""}, {"split", "test"}};
    d["batch_size"] = 8;
    d["threshold"] = 0.5;
  } else if (command == "explain") {
    d["data"] = {{"checkpoint", ""}, {"manifest", ""}, {"split", "test"}};
    d["explain"] = {{"class", 1}, {"layers", nlohmann::json::array()}, {"max_samples", 8}, {"positives_only", true},
                    {"depth_fractions", {0.25, 0.5, 0.75}}};
  } else if (command == "stats") {
    d["data"] = {{"runs", ""}};
    d["alpha"] = kAlpha;
  } else {
    throw UsageError("unknown command '" + command + "'");
  }
  return d;
}

void merge_config(nlohmann::json& base, const nlohmann::json& overlay, const std::string& path) {
  if (!overlay.is_object()) throw UsageError("config" + (path.empty() ? "" : " at '" + path + "'") + " must be an object");
  for (const auto& [k, v] : overlay.items()) {
    const std::string key = path.empty() ? k : path + "." + k;
    if (!base.contains(k)) throw UsageError("unknown config key '" + key + "'");
    nlohmann::json& b = base[k];
    if (b.is_object() && v.is_object())
      merge_config(b, v, key);
    else
      b = v;
  }
}

void apply_override(nlohmann::json& doc, const std::string& assignment, bool strict) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("malformed override '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw UsageError("malformed override key '" + key + "'");
    if (!node->is_object()) {
      if (strict) throw UsageError("override '" + key + "' does not name a config key");
      return;
    }
    if (!node->contains(part)) {
      if (strict) throw UsageError("override '" + key + "' does not name a config key");
      if (dot != std::string::npos) (*node)[part] = nlohmann::json::object();
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
}

nlohmann::json effective_config(const CliConfig& cli) {
  nlohmann::json file = nlohmann::json::object();
  if (!cli.config_path.empty()) {
    std::ifstream f(cli.config_path);
    if (!f) throw UsageError("cannot read config file " + cli.config_path.string());
    file = nlohmann::json::parse(f, nullptr, false);
    if (file.is_discarded() || !file.is_object())
      throw UsageError("config file " + cli.config_path.string() + " is not a JSON object");
  }
  nlohmann::json peek = file;
  if (cli.seed) peek["seed"] = *cli.seed;
  if (cli.profile) set_profiles(peek, *cli.profile, false), peek["profile"] = *cli.profile;
  for (const auto& o : cli.overrides) apply_override(peek, o, false);

  nlohmann::json doc = default_config(cli.command, peek);
  merge_config(doc, file);
  if (cli.seed) set_keys(doc, {"seed", "split_seed"}, *cli.seed);
  if (cli.profile) {
    set_profiles(doc, *cli.profile, false);
    doc["profile"] = *cli.profile;
  }
  for (const auto& o : cli.overrides) apply_override(doc, o, true);
  return doc;
}

std::string config_hash(const nlohmann::json& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_string(config.dump())));
  return buf;
}

void cli::Context::wrote(const std::filesystem::path& p) {
  outputs.push_back(std::filesystem::relative(p, out).generic_string());
}

int run_command(const CliConfig& cli, std::ostream& out, std::ostream& err) {
  if (cli.help) {
    out << cli.help_text;
    return kExitOk;
  }
  auto fail = [&](int code, const char* kind, const std::string& what) {
    err << "pasfuse " << cli.command << ": " << kind << ": " << what << '\n';
    return code;
  };
  try {
    cli::Context ctx;
    ctx.config = effective_config(cli);
    ctx.out = cli.out_dir;
    ctx.verbosity = cli.verbosity;
    ctx.log = [&](int level, const std::string& s) {
      if (level <= cli.verbosity) err << s << '\n';
    };
    std::filesystem::create_directories(ctx.out);
    static const std::map<std::string, void (*)(cli::Context&)> commands{
        {"synth", cli::run_synth},     {"preprocess", cli::run_preprocess}, {"train", cli::run_train},
        {"multirun", cli::run_multirun}, {"compare", cli::run_compare},     {"eval", cli::run_eval},
        {"explain", cli::run_explain}, {"stats", cli::run_stats}};
    commands.at(cli.command)(ctx);

    nlohmann::json run = {{"command", cli.command},
                          {"version", kVersion},
                          {"config", ctx.config},
                          {"config_hash", config_hash(ctx.config)},
                          {"seed", ctx.config.value("seed", std::uint64_t{0})},
                          {"deterministic", cli.deterministic},
                          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                        "." + std::to_string(EIGEN_MINOR_VERSION)},
                          {"outputs", ctx.outputs}};
    std::ofstream(ctx.out / "run.json") << run.dump(2) << '\n';
    return kExitOk;
  } catch (const NumericError& e) {
    return fail(kExitNumeric, "numeric error", e.what());
  } catch (const DegenerateInput& e) {
    return fail(kExitNumeric, "numeric error", e.what());
  } catch (const DataError& e) {
    return fail(kExitData, "data error", e.what());
  } catch (const FormatError& e) {
    return fail(kExitData, "data error", e.what());
  } catch (const ShapeError& e) {
    return fail(kExitOther, "error", e.what());
  } catch (const std::invalid_argument& e) {
    return fail(kExitConfig, "config error", e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(kExitConfig, "config error", e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(kExitData, "data error", e.what());
  } catch (const std::exception& e) {
    return fail(kExitOther, "error", e.what());
  }
}

int cli_main(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  CliConfig cli;
  try {
    cli = parse_args(args);
  } catch (const UsageError& e) {
    std::cerr << "pasfuse: " << e.what() << "\nRun with --help for usage.\n";
    return kExitConfig;
  }
  return run_command(cli, std::cout, std::cerr);
}

}  // namespace pasfuse

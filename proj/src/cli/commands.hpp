#pragma once

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <string>

namespace pasfuse::cli {

struct Context {
  nlohmann::json config;
  std::filesystem::path out;
  int verbosity = 1;
  std::function<void(int, const std::string&)> log;
  nlohmann::json outputs = nlohmann::json::array();  // files written, relative to out

  void info(const std::string& s) const { log(1, s); }
  void debug(const std::string& s) const { log(2, s); }
  void wrote(const std::filesystem::path& p);
};

void run_synth(Context& ctx);
void run_preprocess(Context& ctx);
void run_train(Context& ctx);
void run_multirun(Context& ctx);
void run_compare(Context& ctx);
void run_eval(Context& ctx);
void run_explain(Context& ctx);
void run_stats(Context& ctx);

}  // namespace pasfuse::cli

// ufid command-line front end: serve | calibrate | eval | theory.

#include <csignal>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "ufid/ufid.hpp"

namespace {

ufid::Firewall* g_firewall = nullptr;

extern "C" void on_signal(int) {
  if (g_firewall) g_firewall->stop();
}

int run_serve(const std::string& config_path) {
  const auto cfg = ufid::KeyValueConfig::load(config_path);
  const auto fc = ufid::firewall_config_from(cfg, ufid::seed_from_env());
  ufid::Firewall firewall(fc);
  firewall.bind();
  g_firewall = &firewall;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  firewall.serve_forever();
  g_firewall = nullptr;
  return 0;
}

int run_calibrate(const std::string& config_path, const std::string& manifest, const std::string& out) {
  const auto cfg = ufid::KeyValueConfig::load(config_path);
  const auto seed = ufid::seed_from_env().value_or(cfg.get_u64("seed", 0));
  const auto mode = ufid::parse_query_mode(cfg.get("mode", "unconditional"));
  const auto descriptor = ufid::backend_from(cfg, mode, seed);
  const std::size_t channels = descriptor.synthetic ? descriptor.synthetic->shape.channels
                                                    : ufid::parse_shape(cfg.get("shape", "8x8x3")).channels;
  ufid::CalibrationOptions options;
  options.combined = cfg.get_bool("combined", false);
  options.scoring = ufid::scoring_from(cfg, channels, options.combined);
  options.magnitude = cfg.get_u64("magnitude", 4);
  // Keys that only matter to `serve` are accepted so one file can drive both.
  for (const char* key : {"alpha", "phrases", "threshold", "listen", "concurrency"}) cfg.has(key);
  cfg.reject_unknown();

  const auto validation = ufid::load_validation_manifest(manifest);
  const auto backend = ufid::make_backend(descriptor);
  backend->health_check();
  const auto threshold = ufid::calibrate(validation, *backend, options);
  threshold.save(out);
  std::cout << threshold.to_json().dump(2) << '\n';
  return 0;
}

int run_eval(const std::string& scenario_path, const std::string& out) {
  const auto cfg = ufid::KeyValueConfig::load(scenario_path);
  const auto scenario = ufid::eval::scenario_from_config(cfg, ufid::seed_from_env());
  const std::filesystem::path dir(out);
  if (scenario.sweep) {
    const auto points = ufid::eval::run_sweep(scenario, &dir);
    for (const auto& p : points)
      std::cout << scenario.sweep->param << "=" << p.value << " " << p.metrics.to_json().dump() << '\n';
  } else {
    const auto result = ufid::eval::run_scenario(scenario, &dir);
    std::cout << result.metrics.to_json().dump(2) << '\n';
  }
  return 0;
}

// --params takes comma-separated key=value pairs, e.g. "rho2=2,sigma_c=3".
ufid::KeyValueConfig parse_params(const std::string& text) {
  std::map<std::string, std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (ufid::trim(item).empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) ufid::fail(ufid::ErrorCode::config, "--params entries must be key=value");
    out[ufid::trim(item.substr(0, eq))] = ufid::trim(item.substr(eq + 1));
  }
  return ufid::KeyValueConfig(std::move(out), "--params");
}

int run_theory(const std::string& check, const std::string& params_text) {
  const auto params = parse_params(params_text);
  auto take = [&params](const std::string& key, double fallback) { return params.get_double(key, fallback); };
  auto count = [&params](const std::string& key, std::uint64_t fallback) {
    return static_cast<std::size_t>(params.get_u64(key, fallback));
  };
  const std::map<std::string, std::set<std::string>> known = {
      {"lemma1", {"rho2", "sigma_c", "samples", "seed"}},
      {"theorem1", {"sigma_c", "sigma_b", "rho2", "samples", "seed"}},
      {"corollary1", {"N", "sigma_c", "sigma_b", "samples", "seed"}},
      {"norm-bounds", {"N", "sigma", "samples", "seed"}},
  };
  for (const auto& [key, value] : params.values())
    if (!known.at(check).contains(key)) ufid::fail(ufid::ErrorCode::config, "--params: unknown key '" + key + "' for " + check);
  const ufid::RngSeed seed{params.get_u64("seed", ufid::seed_from_env().value_or(0))};
  std::vector<ufid::theory::BoundReport> reports;
  if (check == "lemma1") {
    const double sigma_c = take("sigma_c", 3.0);
    const auto samples = count("samples", 10000);
    if (params.has("rho2")) {
      reports.push_back(ufid::theory::verify_lemma1(take("rho2", 1.0), sigma_c, samples, seed));
    } else {
      for (double rho2 : {1.0, 2.0, 4.0}) reports.push_back(ufid::theory::verify_lemma1(rho2, sigma_c, samples, seed));
    }
  } else if (check == "theorem1") {
    reports.push_back(ufid::theory::verify_theorem1(take("sigma_c", 5.0), take("sigma_b", 1.0), take("rho2", 2.0),
                                                    count("samples", 10000), seed));
  } else if (check == "corollary1") {
    reports.push_back(ufid::theory::verify_corollary1(count("N", 4), take("sigma_c", 3.0), take("sigma_b", 1.0),
                                                      count("samples", 100000), seed));
  } else if (check == "norm-bounds") {
    const double sigma = take("sigma", 1.0);
    const auto samples = count("samples", 100000);
    if (params.has("N")) {
      reports.push_back(ufid::theory::verify_norm_bounds(count("N", 1), sigma, samples, seed));
    } else {
      for (std::size_t n : {1u, 4u, 16u, 256u})
        reports.push_back(ufid::theory::verify_norm_bounds(n, sigma, samples, seed));
    }
  }

  bool pass = true;
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    out.push_back(r.to_json());
    pass = pass && r.pass;
  }
  std::cout << out.dump(2) << '\n';
  return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UFID backdoor-query firewall for diffusion model services"};
  app.require_subcommand(1);

  std::string config, validation, out, scenario, check, params;

  auto* serve = app.add_subcommand("serve", "Run the firewall HTTP service");
  serve->add_option("--config", config, "Firewall config file")->required()->check(CLI::ExistingFile);

  auto* calibrate = app.add_subcommand("calibrate", "Compute tau from clean validation samples");
  calibrate->add_option("--config", config, "Backend and scoring config file")->required()->check(CLI::ExistingFile);
  calibrate->add_option("--validation", validation, "Validation manifest (JSON)")->required()->check(CLI::ExistingFile);
  calibrate->add_option("--out", out, "Threshold file to write")->required();

  auto* eval = app.add_subcommand("eval", "Run an evaluation scenario");
  eval->add_option("--scenario", scenario, "Scenario file")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", out, "Output directory")->required();

  auto* theory = app.add_subcommand("theory", "Monte Carlo checks of the separation bounds");
  theory->add_option("--check", check, "Which claim to check")
      ->required()
      ->check(CLI::IsMember({"lemma1", "theorem1", "corollary1", "norm-bounds"}));
  theory->add_option("--params", params, "Comma-separated key=value overrides");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve) return run_serve(config);
    if (*calibrate) return run_calibrate(config, validation, out);
    if (*eval) return run_eval(scenario, out);
    if (*theory) return run_theory(check, params);
  } catch (const ufid::Error& e) {
    std::cerr << "ufid: " << ufid::to_string(e.code()) << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "ufid: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

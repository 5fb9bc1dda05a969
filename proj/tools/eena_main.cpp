// eena: evolutionary architecture search over small convolutional networks.
//
// Subcommands:
//   search       run an evolutionary search from a JSON config
//   verify       check function preservation of the mutation operators
//   export-tree  export the phylogenetic tree of a finished run
//   ablate       matched-seed comparison with and without crossover
//   eval         evaluate a stored network on a dataset's validation split
//
// Exit codes: 0 success, 1 usage error, 2 data/config error,
//             3 verification failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "eena/config.hpp"
#include "eena/run.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitVerify = 3;

eena::RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw eena::data_error("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return eena::parse_run_config_text(text);
}

// Precedence for the output directory: --output-dir flag, then the
// EENA_OUTPUT_DIR environment variable, then the config file value.
std::string resolve_output_dir(const eena::RunConfig& cfg,
                               const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("EENA_OUTPUT_DIR"); env && *env) return env;
  return cfg.output_dir;
}

std::string read_network_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw eena::data_error("cannot open network file: " + path);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

struct SearchArgs {
  std::string config_path;
  std::string output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> max_rounds;
  std::optional<std::string> precision;
  bool resume = false;
};

template <class Real>
int do_search(eena::RunConfig cfg, const SearchArgs& args) {
  const std::string out = resolve_output_dir(cfg, args.output_dir);
  const eena::SearchResult r = eena::run_search<Real>(cfg, out, args.resume);
  std::cout << "best individual: " << r.best_id << "\n"
            << "best fitness:    " << r.best_fitness << "\n"
            << "parameters:      " << r.best_parameters << "\n"
            << "rounds:          " << r.rounds << "\n"
            << "stop reason:     " << r.stop_reason << "\n"
            << "artifacts in:    " << out << "\n";
  return kExitOk;
}

int cmd_search(const SearchArgs& args) {
  eena::RunConfig cfg = load_config(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  if (args.max_rounds) cfg.ctx.evo.max_rounds = *args.max_rounds;
  if (args.precision) cfg.precision = *args.precision;
  if (cfg.precision == "f64") return do_search<double>(cfg, args);
  return do_search<float>(cfg, args);
}

struct VerifyArgs {
  std::string network_path;
  int trials = 100;
  double noise_max = 0.0;
  std::uint64_t seed = 1;
  std::string precision = "f32";
};

template <class Real>
int do_verify(const VerifyArgs& args) {
  const eena::NetworkGraph<Real> base =
      eena::decode_network<Real>(read_network_file(args.network_path));
  const auto rows = eena::verify_preservation<Real>(base, args.trials,
                                                    args.noise_max, args.seed);
  const double tol = eena::preservation_tolerance<Real>();
  bool ok = true;
  std::cout << "operator          applications  max deviation\n";
  for (const auto& row : rows) {
    std::printf("%-17s %12d  %.3e\n", row.op.c_str(), row.applications,
                row.max_deviation);
    if (args.noise_max == 0.0 && row.max_deviation > tol) ok = false;
  }
  if (args.noise_max == 0.0)
    std::cout << "tolerance: " << tol << " -> "
              << (ok ? "preserved" : "NOT preserved") << "\n";
  return ok ? kExitOk : kExitVerify;
}

int cmd_verify(const VerifyArgs& args) {
  if (args.precision == "f64") return do_verify<double>(args);
  return do_verify<float>(args);
}

int cmd_export_tree(const std::string& run_dir, const std::string& format,
                    const std::string& out_path) {
  const fs::path src = fs::path(run_dir) / "checkpoint.json";
  if (!fs::exists(src))
    throw eena::data_error("no checkpoint.json in run directory: " + run_dir);
  // The phylogeny is precision-independent; decode as f32.
  const eena::EvolutionState<float> st = eena::checkpoint_from_json<float>(
      json::parse(eena::detail::read_file(src)));
  std::string text;
  if (format == "dot") {
    text = eena::export_phylo_dot(st.store);
  } else if (format == "json") {
    text = eena::export_phylo_json(st.store).dump(2);
  } else {
    throw eena::data_error("unknown tree format: " + format);
  }
  if (out_path.empty() || out_path == "-") {
    std::cout << text;
  } else {
    eena::detail::write_file_atomic(out_path, text);
    std::cout << "wrote " << out_path << "\n";
  }
  return kExitOk;
}

int cmd_ablate(const std::string& config_path, int seeds,
               const std::string& output_dir_flag) {
  eena::RunConfig cfg = load_config(config_path);
  const std::string out = resolve_output_dir(cfg, output_dir_flag);
  json report;
  if (cfg.precision == "f64")
    report = eena::run_ablation<double>(cfg, seeds, out);
  else
    report = eena::run_ablation<float>(cfg, seeds, out);
  fs::create_directories(out);
  eena::detail::write_file_atomic(fs::path(out) / "ablation.json",
                                  report.dump(2));
  std::cout << report.dump(2) << "\n";
  return kExitOk;
}

template <class Real>
int do_eval(const std::string& network_path, const eena::RunConfig& cfg) {
  eena::NetworkGraph<Real> g =
      eena::decode_network<Real>(read_network_file(network_path));
  const eena::SplitDataset<Real> data = eena::load_dataset<Real>(cfg.dataset);
  const double acc = eena::evaluate(g, data.val, cfg.ctx.train_base.batch_size);
  std::cout << "validation accuracy: " << acc << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& network_path, const std::string& config_path,
             const std::string& precision) {
  eena::RunConfig cfg = load_config(config_path);
  if (!precision.empty()) cfg.precision = precision;
  if (cfg.precision == "f64") return do_eval<double>(network_path, cfg);
  return do_eval<float>(network_path, cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"eena: evolutionary neural architecture search"};
  app.require_subcommand(1);

  SearchArgs search_args;
  auto* search = app.add_subcommand("search", "run an evolutionary search");
  search->add_option("config", search_args.config_path, "JSON config file")
      ->required();
  search->add_option("--output-dir", search_args.output_dir,
                     "override the output directory");
  std::uint64_t seed_flag = 0;
  auto* seed_opt = search->add_option("--seed", seed_flag, "override the seed");
  int rounds_flag = 0;
  auto* rounds_opt =
      search->add_option("--max-rounds", rounds_flag, "override max_rounds");
  std::string precision_flag;
  search->add_option("--precision", precision_flag, "f32 or f64");
  search->add_flag("--resume", search_args.resume,
                   "resume from checkpoint.json in the output directory");

  VerifyArgs verify_args;
  auto* verify =
      app.add_subcommand("verify", "check morphism function preservation");
  verify->add_option("network", verify_args.network_path, "network document")
      ->required();
  verify->add_option("--trials", verify_args.trials, "applications per operator")
      ->check(CLI::PositiveNumber);
  verify->add_option("--noise-max", verify_args.noise_max,
                     "widen noise bound (0 checks exact preservation)");
  verify->add_option("--seed", verify_args.seed, "sampling seed");
  verify->add_option("--precision", verify_args.precision, "f32 or f64");

  std::string tree_dir, tree_format = "dot", tree_out;
  auto* tree =
      app.add_subcommand("export-tree", "export the phylogenetic tree");
  tree->add_option("run_dir", tree_dir, "directory of a finished run")
      ->required();
  tree->add_option("--format", tree_format, "dot or json");
  tree->add_option("--out", tree_out, "output file (default: stdout)");

  std::string ablate_config, ablate_out;
  int ablate_seeds = 5;
  auto* ablate =
      app.add_subcommand("ablate", "compare search with and without crossover");
  ablate->add_option("config", ablate_config, "JSON config file")->required();
  ablate->add_option("--seeds", ablate_seeds, "matched seeds per arm")
      ->check(CLI::PositiveNumber);
  ablate->add_option("--output-dir", ablate_out, "override the output directory");

  std::string eval_network, eval_config, eval_precision;
  auto* eval = app.add_subcommand("eval", "evaluate a network document");
  eval->add_option("network", eval_network, "network document")->required();
  eval->add_option("--config", eval_config, "JSON config with the dataset spec")
      ->required();
  eval->add_option("--precision", eval_precision, "f32 or f64");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*search) {
      if (*seed_opt) search_args.seed = seed_flag;
      if (*rounds_opt) search_args.max_rounds = rounds_flag;
      if (!precision_flag.empty()) search_args.precision = precision_flag;
      return cmd_search(search_args);
    }
    if (*verify) return cmd_verify(verify_args);
    if (*tree) return cmd_export_tree(tree_dir, tree_format, tree_out);
    if (*ablate) return cmd_ablate(ablate_config, ablate_seeds, ablate_out);
    if (*eval) return cmd_eval(eval_network, eval_config, eval_precision);
  } catch (const eena::error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

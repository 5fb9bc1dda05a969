#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "eena/config.hpp"

namespace eena {

namespace detail {

inline std::string base64_encode(const std::string& in) {
  static const char* tbl =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 2 < in.size()) {
    const unsigned v = (static_cast<unsigned char>(in[i]) << 16) |
                       (static_cast<unsigned char>(in[i + 1]) << 8) |
                       static_cast<unsigned char>(in[i + 2]);
    out += tbl[(v >> 18) & 63];
    out += tbl[(v >> 12) & 63];
    out += tbl[(v >> 6) & 63];
    out += tbl[v & 63];
    i += 3;
  }
  if (i + 1 == in.size()) {
    const unsigned v = static_cast<unsigned char>(in[i]) << 16;
    out += tbl[(v >> 18) & 63];
    out += tbl[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == in.size()) {
    const unsigned v = (static_cast<unsigned char>(in[i]) << 16) |
                       (static_cast<unsigned char>(in[i + 1]) << 8);
    out += tbl[(v >> 18) & 63];
    out += tbl[(v >> 12) & 63];
    out += tbl[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

inline std::string base64_decode(const std::string& in) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::string out;
  int buf = 0, bits = 0;
  for (char c : in) {
    if (c == '=') break;
    const int v = val(c);
    if (v < 0) throw data_error("base64: invalid character");
    buf = (buf << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out += static_cast<char>((buf >> bits) & 0xff);
    }
  }
  return out;
}

inline void write_file_atomic(const std::filesystem::path& path,
                              const std::string& contents) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out.write(contents.data(), contents.size());
    if (!out) throw data_error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Checkpoints: the full evolution state, written atomically at every round
// boundary so interrupted runs resume bit-exactly.
// ---------------------------------------------------------------------------

template <class Real>
nlohmann::json checkpoint_to_json(const EvolutionState<Real>& st) {
  nlohmann::json out;
  out["version"] = 1;
  out["initialized"] = st.initialized;
  out["round"] = st.round;
  out["population"] = st.population;
  out["best_id"] = st.best_id;
  out["best_fitness"] = st.best_fitness;
  out["rounds_since_improve"] = st.rounds_since_improve;
  out["stop_reason"] = st.stop_reason;
  std::ostringstream rs;
  rs << st.rng;
  out["rng"] = rs.str();
  out["log"] = st.log;
  nlohmann::json store;
  store["last_global_id"] = st.store.last_global_id();
  store["entries"] = nlohmann::json::array();
  for (const LineageEntry<Real>& e : st.store.entries()) {
    store["entries"].push_back({{"id", e.id},
                                {"parents", e.parents},
                                {"records", e.genotype},
                                {"fitness", e.fitness},
                                {"birth_round", e.birth_round},
                                {"trained_epochs", e.trained_epochs},
                                {"snapshot", detail::base64_encode(e.snapshot)}});
  }
  out["store"] = std::move(store);
  return out;
}

template <class Real>
EvolutionState<Real> checkpoint_from_json(const nlohmann::json& j) {
  EvolutionState<Real> st;
  if (j.at("version").get<int>() != 1)
    throw data_error("checkpoint: unsupported version");
  st.initialized = j.at("initialized").get<bool>();
  st.round = j.at("round").get<int>();
  st.population = j.at("population").get<std::vector<int>>();
  st.best_id = j.at("best_id").get<int>();
  st.best_fitness = j.at("best_fitness").get<double>();
  st.rounds_since_improve = j.at("rounds_since_improve").get<int>();
  st.stop_reason = j.at("stop_reason").get<std::string>();
  std::istringstream rs(j.at("rng").get<std::string>());
  rs >> st.rng;
  st.log = j.at("log").get<std::vector<RoundLogEntry>>();
  const auto& store = j.at("store");
  st.store.set_last_global_id(store.at("last_global_id").get<std::int64_t>());
  for (const auto& je : store.at("entries")) {
    LineageEntry<Real> e;
    e.parents = je.at("parents").get<std::vector<int>>();
    e.genotype = je.at("records").get<Genotype>();
    e.fitness = je.at("fitness").get<double>();
    e.birth_round = je.at("birth_round").get<int>();
    e.trained_epochs = je.at("trained_epochs").get<int>();
    e.snapshot = detail::base64_decode(je.at("snapshot").get<std::string>());
    st.store.add(std::move(e));
  }
  return st;
}

// ---------------------------------------------------------------------------
// Search driver: run (or resume) a search and write every artifact into the
// output directory.
// ---------------------------------------------------------------------------

inline std::string round_log_jsonl(const std::vector<RoundLogEntry>& log) {
  std::string out;
  for (const RoundLogEntry& e : log) {
    out += nlohmann::json(e).dump();
    out += '\n';
  }
  return out;
}

template <class Real>
nlohmann::json genotype_document(const LineageEntry<Real>& e) {
  return {{"individual_id", e.id},
          {"parents", e.parents},
          {"records", e.genotype},
          {"fitness", e.fitness},
          {"birth_round", e.birth_round}};
}

struct SearchResult {
  int best_id = -1;
  double best_fitness = -1.0;
  std::size_t best_parameters = 0;
  std::string stop_reason;
  int rounds = 0;
};

template <class Real>
SearchResult run_search(const RunConfig& cfg, const std::string& output_dir,
                        bool resume) {
  namespace fs = std::filesystem;
  fs::create_directories(output_dir);
  const fs::path out(output_dir);
  const fs::path ckpt_path = out / "checkpoint.json";

  SplitDataset<Real> data = load_dataset<Real>(cfg.dataset);
  InitialModelConfig model_cfg = cfg.model;
  model_cfg.in_channels = data.train.images.c();
  model_cfg.classes = data.train.classes;

  EvolutionState<Real> st;
  if (resume) {
    if (!fs::exists(ckpt_path))
      throw data_error("resume: no checkpoint in " + output_dir);
    st = checkpoint_from_json<Real>(
        nlohmann::json::parse(detail::read_file(ckpt_path)));
  }

  const auto t0 = std::chrono::steady_clock::now();
  const auto on_round = [&](const EvolutionState<Real>& s) {
    detail::write_file_atomic(ckpt_path, checkpoint_to_json(s).dump());
  };
  const int best = evolve<Real>(st, cfg.ctx, data, model_cfg, cfg.seed, on_round);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const LineageEntry<Real>& champion = st.store.entry(best);
  NetworkGraph<Real> champion_graph = decode_network<Real>(champion.snapshot);

  detail::write_file_atomic(out / "round_log.jsonl", round_log_jsonl(st.log));
  detail::write_file_atomic(out / "best_network.eena", champion.snapshot);
  detail::write_file_atomic(out / "best_genotype.json",
                            genotype_document(champion).dump(2));
  detail::write_file_atomic(out / "phylo.dot", export_phylo_dot(st.store));
  detail::write_file_atomic(out / "phylo.json", export_phylo_json(st.store).dump(2));

  nlohmann::json report;
  report["best_individual"] = champion.id;
  report["best_fitness"] = champion.fitness;
  report["best_parameters"] = champion_graph.parameter_count();
  report["stop_reason"] = st.stop_reason;
  report["rounds"] = st.round;
  report["individuals"] = st.store.size();
  report["wall_time_seconds"] = wall;
  report["effect_report"] = effect_report(st.log);
  detail::write_file_atomic(out / "report.json", report.dump(2));

  return {champion.id, champion.fitness, champion_graph.parameter_count(),
          st.stop_reason, st.round};
}

// ---------------------------------------------------------------------------
// Verification driver: apply each operator repeatedly at random legal sites
// and report the worst inference-output deviation.
// ---------------------------------------------------------------------------

template <class Real>
constexpr double preservation_tolerance() {
  return std::is_same_v<Real, double> ? 1e-8 : 1e-4;
}

struct VerifyRow {
  std::string op;
  int applications = 0;
  double max_deviation = 0.0;
};

template <class Real>
std::vector<VerifyRow> verify_preservation(const NetworkGraph<Real>& base,
                                           int trials, double noise_max,
                                           std::uint64_t seed, int input_hw = 8,
                                           int batch = 2) {
  Rng rng(seed);
  std::vector<VerifyRow> rows;
  for (MutationKind kind : all_mutation_kinds()) {
    MorphConfig morph;
    morph.noise_max = noise_max;
    morph.operations = {kind};
    VerifyRow row{mutation_kind_name(kind), 0, 0.0};
    for (int t = 0; t < trials; ++t) {
      NetworkGraph<Real> teacher = base;
      Tensor<Real> x(batch, input_hw, input_hw, teacher.in_channels);
      fill_uniform(x, rng, -1.0, 1.0);
      Tensor<Real> before = forward(teacher, x, RunMode::Infer);
      NetworkGraph<Real> student = teacher;
      try {
        sample_mutation(student, morph, rng);
      } catch (const morph_error&) {
        continue;  // no legal site on this network
      }
      Tensor<Real> after = forward(student, x, RunMode::Infer);
      for (std::size_t i = 0; i < before.size(); ++i)
        row.max_deviation =
            std::max(row.max_deviation,
                     std::abs(static_cast<double>(before.data[i]) -
                              static_cast<double>(after.data[i])));
      ++row.applications;
    }
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Ablation driver: matched-seed searches with and without crossover.
// ---------------------------------------------------------------------------

template <class Real>
nlohmann::json run_ablation(const RunConfig& cfg, int seeds,
                            const std::string& output_dir) {
  nlohmann::json arms;
  double mean_with = 0.0, mean_without = 0.0;
  double best_with = 0.0, best_without = 0.0;
  for (const bool crossover : {true, false}) {
    nlohmann::json arm = nlohmann::json::array();
    double mean = 0.0, best = 0.0;
    for (int s = 0; s < seeds; ++s) {
      RunConfig c = cfg;
      c.seed = cfg.seed + s;
      c.ctx.evo.crossover_enabled = crossover;
      const std::string dir = output_dir + "/" +
                              (crossover ? "with_crossover" : "no_crossover") +
                              "_seed" + std::to_string(s);
      const SearchResult r = run_search<Real>(c, dir, false);
      arm.push_back({{"seed", c.seed},
                     {"best_fitness", r.best_fitness},
                     {"rounds", r.rounds},
                     {"stop_reason", r.stop_reason}});
      mean += r.best_fitness;
      best = std::max(best, r.best_fitness);
    }
    mean /= seeds;
    if (crossover) {
      arms["with_crossover"] = {{"runs", arm}, {"mean_best_fitness", mean},
                                {"best_fitness", best}};
      mean_with = mean;
      best_with = best;
    } else {
      arms["no_crossover"] = {{"runs", arm}, {"mean_best_fitness", mean},
                              {"best_fitness", best}};
      mean_without = mean;
      best_without = best;
    }
  }
  arms["mean_advantage_with_crossover"] = mean_with - mean_without;
  arms["best_advantage_with_crossover"] = best_with - best_without;
  return arms;
}

}  // namespace eena

#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "eena/dataset.hpp"
#include "eena/evolution.hpp"

namespace eena {

struct RunConfig {
  std::uint64_t seed = 1;
  std::string precision = "f32";  // f32 | f64
  std::string output_dir = "run_output";
  DatasetSpec dataset;
  InitialModelConfig model;  // in_channels/classes filled from the dataset
  EvolveContext ctx;
};

namespace detail {

inline void check_keys(const nlohmann::json& obj,
                       const std::set<std::string>& allowed,
                       const std::string& where) {
  if (!obj.is_object()) throw data_error("config: " + where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!allowed.count(key))
      throw data_error("config: unknown key \"" + key + "\" in " + where);
  }
}

template <class T>
void maybe(const nlohmann::json& obj, const char* key, T& out) {
  if (obj.contains(key)) obj.at(key).get_to(out);
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig cfg;
  detail::check_keys(j, {"seed", "precision", "output_dir", "dataset", "model",
                         "sgdr", "train", "morph", "evolution"},
                     "top level");
  detail::maybe(j, "seed", cfg.seed);
  detail::maybe(j, "precision", cfg.precision);
  detail::maybe(j, "output_dir", cfg.output_dir);
  if (cfg.precision != "f32" && cfg.precision != "f64")
    throw data_error("config: precision must be \"f32\" or \"f64\"");

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    detail::check_keys(d,
                       {"type", "classes", "height", "width", "samples",
                        "generator_seed", "noise", "images", "labels",
                        "validation_fraction"},
                       "dataset");
    std::string type = "synthetic";
    detail::maybe(d, "type", type);
    if (type == "synthetic") {
      cfg.dataset.source = DatasetSpec::Source::Synthetic;
      detail::maybe(d, "classes", cfg.dataset.synthetic.classes);
      detail::maybe(d, "height", cfg.dataset.synthetic.height);
      detail::maybe(d, "width", cfg.dataset.synthetic.width);
      detail::maybe(d, "samples", cfg.dataset.synthetic.samples);
      detail::maybe(d, "generator_seed", cfg.dataset.synthetic.seed);
      detail::maybe(d, "noise", cfg.dataset.synthetic.noise);
    } else if (type == "idx") {
      cfg.dataset.source = DatasetSpec::Source::Idx;
      cfg.dataset.images_path = d.at("images").get<std::string>();
      cfg.dataset.labels_path = d.at("labels").get<std::string>();
    } else {
      throw data_error("config: dataset.type must be \"synthetic\" or \"idx\"");
    }
    detail::maybe(d, "validation_fraction", cfg.dataset.validation_fraction);
  }

  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::check_keys(m, {"stem_channels", "block_channels", "last_channels"},
                       "model");
    detail::maybe(m, "stem_channels", cfg.model.stem_channels);
    detail::maybe(m, "block_channels", cfg.model.block_channels);
    detail::maybe(m, "last_channels", cfg.model.last_channels);
  }

  if (j.contains("sgdr")) {
    const auto& s = j.at("sgdr");
    detail::check_keys(s, {"l_max", "t0", "t_mult"}, "sgdr");
    detail::maybe(s, "l_max", cfg.ctx.train_base.schedule.l_max);
    detail::maybe(s, "t0", cfg.ctx.train_base.schedule.t0);
    detail::maybe(s, "t_mult", cfg.ctx.train_base.schedule.t_mult);
    cfg.ctx.train_base.schedule.validate();
  }

  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::check_keys(
        t, {"batch_size", "weight_decay", "augment", "pad", "hflip",
            "check_finite"},
        "train");
    detail::maybe(t, "batch_size", cfg.ctx.train_base.batch_size);
    detail::maybe(t, "weight_decay", cfg.ctx.train_base.weight_decay);
    detail::maybe(t, "augment", cfg.ctx.train_base.augment.enabled);
    detail::maybe(t, "pad", cfg.ctx.train_base.augment.pad);
    detail::maybe(t, "hflip", cfg.ctx.train_base.augment.hflip);
    detail::maybe(t, "check_finite", cfg.ctx.train_base.check_finite);
    if (cfg.ctx.train_base.batch_size < 1)
      throw data_error("config: batch_size must be positive");
  }

  if (j.contains("morph")) {
    const auto& m = j.at("morph");
    detail::check_keys(m, {"noise_max", "operations", "widen_max_channels"},
                       "morph");
    detail::maybe(m, "noise_max", cfg.ctx.morph.noise_max);
    detail::maybe(m, "widen_max_channels", cfg.ctx.morph.widen_max_channels);
    if (m.contains("operations")) {
      cfg.ctx.morph.operations.clear();
      for (const auto& op : m.at("operations"))
        cfg.ctx.morph.operations.push_back(
            mutation_kind_from_name(op.get<std::string>()));
    }
    cfg.ctx.morph.validate();
  }

  if (j.contains("evolution")) {
    const auto& e = j.at("evolution");
    detail::check_keys(
        e,
        {"k", "lambda", "population", "initial_count", "crossover_period",
         "epochs_mutation", "epochs_crossover", "epochs_initial", "patience",
         "max_rounds", "time_budget_seconds", "p_inherit", "crossover",
         "sgdr_restart_per_burst"},
        "evolution");
    detail::maybe(e, "k", cfg.ctx.evo.k);
    detail::maybe(e, "lambda", cfg.ctx.evo.lambda);
    detail::maybe(e, "population", cfg.ctx.evo.population_cap);
    detail::maybe(e, "initial_count", cfg.ctx.evo.initial_count);
    detail::maybe(e, "crossover_period", cfg.ctx.evo.crossover_period);
    detail::maybe(e, "epochs_mutation", cfg.ctx.evo.epochs_mutation);
    detail::maybe(e, "epochs_crossover", cfg.ctx.evo.epochs_crossover);
    detail::maybe(e, "epochs_initial", cfg.ctx.evo.epochs_initial);
    detail::maybe(e, "patience", cfg.ctx.evo.patience);
    detail::maybe(e, "max_rounds", cfg.ctx.evo.max_rounds);
    detail::maybe(e, "time_budget_seconds", cfg.ctx.evo.time_budget_seconds);
    detail::maybe(e, "p_inherit", cfg.ctx.evo.p_inherit);
    detail::maybe(e, "crossover", cfg.ctx.evo.crossover_enabled);
    detail::maybe(e, "sgdr_restart_per_burst", cfg.ctx.sgdr_restart_per_burst);
    cfg.ctx.evo.validate();
  }
  return cfg;
}

inline RunConfig parse_run_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("config: not valid JSON: ") + e.what());
  }
  return parse_run_config(j);
}

}  // namespace eena

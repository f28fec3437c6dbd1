// divo: dataset generation, training, evaluation and grid sweeps.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "divo/divo.hpp"

namespace fs = std::filesystem;
using namespace divo;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

// "key=value" -> {key, value}
std::pair<std::string, std::string> split_assignment(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("expected key=value, got '" + s + "'");
  return {s.substr(0, eq), s.substr(eq + 1)};
}

TrainConfig build_config(const std::string& path, const std::vector<std::string>& overrides) {
  TrainConfig cfg = path.empty() ? TrainConfig{} : load_config(path);
  for (const auto& o : overrides) {
    const auto [k, v] = split_assignment(o);
    set_config_value(cfg, k, v);
  }
  cfg.validate();
  return cfg;
}

void print_final(const RunMetrics& m) {
  if (m.records.empty()) {
    std::printf("no evaluations recorded\n");
    return;
  }
  const auto& last = m.records.back();
  std::printf("iteration %lld  return %.4f  normalized %.2f  final(last %zu) %.2f\n",
              static_cast<long long>(last.iteration), last.eval_return, last.normalized_score,
              std::min<std::size_t>(10, m.records.size()), m.final_score());
}

RunMetrics run_training(const TrainConfig& cfg, const OfflineDataset& data, const std::string& env_id,
                        const std::string& algo, const std::string& resume, const fs::path& out) {
  fs::create_directories(out);
  write_text((out / "config.txt").string(), format_config(cfg));
  if (algo == "bc") {
    const RunMetrics m = train_behavior_cloning(cfg, data, env_id);
    emit_metrics(m, (out / "metrics.csv").string());
    return m;
  }
  Trainer trainer = resume.empty() ? Trainer(cfg, data, env_id) : Trainer::resume(resume, data);
  trainer.mutable_state().config.total_iterations = cfg.total_iterations;
  trainer.run(cfg.total_iterations);
  trainer.save((out / "checkpoint.bin").string());
  emit_metrics(trainer.metrics(), (out / "metrics.csv").string());
  return trainer.metrics();
}

}  // namespace

int main(int argc, char** argv) {
  configure_runtime();
  CLI::App app{"DIVO offline RL: generate data, train, evaluate, sweep"};
  app.require_subcommand(1);

  // gen-data
  std::string g_env, g_mix = "expert:0.5,random:0.5", g_out;
  int g_episodes = 2000;
  std::uint64_t g_seed = 0;
  auto* gen = app.add_subcommand("gen-data", "Roll out scripted policies into a dataset file");
  gen->add_option("--env", g_env, "Environment id")->required();
  gen->add_option("--mix", g_mix, "Policy mix, kind:fraction,...");
  gen->add_option("--episodes", g_episodes, "Episode count");
  gen->add_option("--seed", g_seed, "Generator seed");
  gen->add_option("--out", g_out, "Output file")->required();

  // train
  std::string t_config, t_data, t_env, t_out, t_resume, t_algo = "divo";
  std::vector<std::string> t_set;
  std::uint64_t t_seed = 0;
  auto* tr = app.add_subcommand("train", "Train on a dataset file");
  tr->add_option("--config", t_config, "Config file (key = value)");
  tr->add_option("--data", t_data, "Dataset file")->required();
  tr->add_option("--env", t_env, "Environment id")->required();
  auto* t_seed_opt = tr->add_option("--seed", t_seed, "Seed (overrides the config)");
  tr->add_option("--out", t_out, "Output directory")->required();
  tr->add_option("--set", t_set, "Config override key=value, repeatable");
  tr->add_option("--resume", t_resume, "Continue from a checkpoint; only total_iterations may be changed with --set");
  tr->add_option("--algo", t_algo, "divo or bc")->check(CLI::IsMember({"divo", "bc"}));

  // eval
  std::string e_env, e_ckpt;
  int e_episodes = 10;
  std::uint64_t e_seed = 0;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint's actor");
  ev->add_option("--env", e_env, "Environment id")->required();
  ev->add_option("--checkpoint", e_ckpt, "Checkpoint file")->required();
  ev->add_option("--episodes", e_episodes, "Episode count");
  ev->add_option("--seed", e_seed, "Evaluation seed");

  // sweep
  std::string s_config, s_data, s_env, s_out, s_seeds, s_algo = "divo";
  std::vector<std::string> s_params, s_set;
  auto* sw = app.add_subcommand("sweep", "Grid over config values and seeds");
  sw->add_option("--config", s_config, "Base config file");
  sw->add_option("--data", s_data, "Dataset file")->required();
  sw->add_option("--env", s_env, "Environment id")->required();
  sw->add_option("--param", s_params, "key=v1,v2,... ; repeat for a grid")->required();
  sw->add_option("--seeds", s_seeds, "Comma-separated seeds (default: the config seed)");
  sw->add_option("--set", s_set, "Fixed override key=value, repeatable");
  sw->add_option("--out", s_out, "Output directory")->required();
  sw->add_option("--algo", s_algo, "divo or bc")->check(CLI::IsMember({"divo", "bc"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      GeneratorSpec spec{g_env, parse_mix(g_mix), g_episodes, g_seed};
      const OfflineDataset d = generate_dataset(spec);
      d.save(g_out);
      std::printf("%zu transitions -> %s\n", d.size(), g_out.c_str());
    } else if (*tr) {
      const OfflineDataset data = OfflineDataset::load(t_data);
      TrainConfig cfg;
      if (!t_resume.empty()) {
        cfg = load_checkpoint(t_resume).config;
        for (const auto& o : t_set) {
          const auto [k, v] = split_assignment(o);
          if (k != "total_iterations") throw UsageError("only total_iterations may change on resume");
          set_config_value(cfg, k, v);
        }
      } else {
        cfg = build_config(t_config, t_set);
        if (*t_seed_opt) cfg.seed = t_seed;
      }
      print_final(run_training(cfg, data, t_env, t_algo, t_resume, t_out));
    } else if (*ev) {
      const TrainerState s = load_checkpoint(e_ckpt);
      if (s.env_id != e_env) throw ConfigError("checkpoint was trained on " + s.env_id + ", not " + e_env);
      auto env = make_env(e_env);
      Rng rng(e_seed, Stream::kEval);
      const EvalResult r = evaluate_policy(*env, s.actor.spec, s.actor.theta, s.stats, e_episodes, rng);
      std::printf("episodes %d  mean_return %.6f  std %.6f  normalized %.3f\n", e_episodes, r.mean_return,
                  r.std_return, normalized_score(score_anchors(e_env), r.mean_return));
    } else if (*sw) {
      const OfflineDataset data = OfflineDataset::load(s_data);
      const TrainConfig base = build_config(s_config, s_set);
      std::vector<std::uint64_t> seeds;
      if (s_seeds.empty()) seeds.push_back(base.seed);
      else
        for (const auto& x : split(s_seeds, ',')) seeds.push_back(detail::parse_number<std::uint64_t>("seeds", x));

      std::vector<std::pair<std::string, std::vector<std::string>>> axes;
      for (const auto& p : s_params) {
        const auto [k, v] = split_assignment(p);
        get_config_value(base, k);  // rejects unknown keys up front
        axes.emplace_back(k, split(v, ','));
      }

      const fs::path out(s_out);
      fs::create_directories(out);
      std::string summary = std::string(kSummaryHeader) + "\n";
      std::vector<std::size_t> idx(axes.size(), 0);
      for (bool more = true; more;) {
        TrainConfig cfg = base;
        std::string label, dir;
        for (std::size_t i = 0; i < axes.size(); ++i) {
          const auto& [k, vals] = axes[i];
          set_config_value(cfg, k, vals[idx[i]]);
          label += (i ? ";" : "") + k + "=" + vals[idx[i]];
          dir += (i ? "_" : "") + k + "-" + vals[idx[i]];
        }
        std::vector<double> finals;
        for (const auto seed : seeds) {
          cfg.seed = seed;
          cfg.validate();
          const RunMetrics m =
              run_training(cfg, data, s_env, s_algo, "", out / dir / ("seed" + std::to_string(seed)));
          finals.push_back(m.final_score());
          std::printf("%s seed %llu final %.2f\n", label.c_str(), static_cast<unsigned long long>(seed),
                      finals.back());
          std::fflush(stdout);
        }
        summary += summary_row(label, summarize_scores(finals)) + "\n";

        more = false;
        for (std::size_t i = axes.size(); i-- > 0;) {
          if (++idx[i] < axes[i].second.size()) {
            more = true;
            break;
          }
          idx[i] = 0;
        }
      }
      write_text((out / "summary.csv").string(), summary);
      std::printf("%s", summary.c_str());
    }
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}

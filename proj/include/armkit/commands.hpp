#pragma once

// The `armkit` subcommands. Each command reads an ExperimentConfig, writes its
// reports into the output directory and finishes with manifest.json listing
// every file it wrote.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "armkit/analytics.hpp"
#include "armkit/arm.hpp"
#include "armkit/config.hpp"
#include "armkit/error.hpp"
#include "armkit/mless.hpp"
#include "armkit/model.hpp"
#include "armkit/theory.hpp"
#include "armkit/transformer.hpp"
#include "armkit/verify.hpp"
#include "armkit/weights_io.hpp"

namespace armkit {

inline constexpr const char* kToolVersion = "0.1.0";

struct RunOptions {
  std::filesystem::path out_dir = "out";
  bool timestamps = true;
  std::size_t threads = 1;
  std::optional<double> tol;
};

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Shortest round-trip text for a double, so CSV payloads are stable.
inline std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using CsvRow = std::vector<std::string>;

class RunWriter {
 public:
  RunWriter(std::string command, const ExperimentConfig& cfg, const RunOptions& opt)
      : command_(std::move(command)), hash_(config_hash(cfg)), opt_(opt) {
    std::error_code ec;
    std::filesystem::create_directories(opt_.out_dir, ec);
    if (ec || !std::filesystem::is_directory(opt_.out_dir)) {
      throw IoError("cannot create output directory '" + opt_.out_dir.string() + "'");
    }
    if (opt_.timestamps) started_ = utc_now();
  }

  const std::string& config_hash_hex() const noexcept { return hash_; }
  std::filesystem::path path(const std::string& name) const { return opt_.out_dir / name; }

  void json(const std::string& name, const nlohmann::json& j) { text(name, j.dump(2) + "\n"); }

  void jsonl(const std::string& name, const std::vector<nlohmann::json>& lines) {
    std::string s;
    for (const auto& j : lines) s += j.dump() + "\n";
    text(name, s);
  }

  void csv(const std::string& name, const CsvRow& header, const std::vector<CsvRow>& rows) {
    std::string s;
    auto put = [&s](const CsvRow& r) {
      for (std::size_t i = 0; i < r.size(); ++i) s += (i ? "," : "") + r[i];
      s += "\n";
    };
    put(header);
    for (const auto& r : rows) {
      if (r.size() != header.size()) throw Error("csv '" + name + "': row width does not match header");
      put(r);
    }
    text(name, s);
  }

  // Records files written by other code (weight containers).
  void record(const std::filesystem::path& p) { files_.push_back(p.filename().string()); }

  void text(const std::string& name, const std::string& payload) {
    std::ofstream out(path(name), std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path(name).string() + "'");
    out << payload;
    if (!out) throw IoError("short write to '" + path(name).string() + "'");
    files_.push_back(name);
  }

  void finish(bool ok) {
    nlohmann::json m;
    m["command"] = command_;
    m["config_hash"] = hash_;
    m["tool_version"] = kToolVersion;
    m["files"] = files_;
    m["ok"] = ok;
    if (opt_.timestamps) {
      m["started_at"] = started_;
      m["finished_at"] = utc_now();
    }
    std::ofstream out(path("manifest.json"), std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write manifest");
    out << m.dump(2) << "\n";
  }

 private:
  std::string command_;
  std::string hash_;
  RunOptions opt_;
  std::string started_;
  std::vector<std::string> files_;
};

// ---------------------------------------------------------------------------
// Shared setup

inline LoadedModel resolve_model(const ExperimentConfig& cfg) {
  if (!cfg.weights_path.empty()) return load_weights(cfg.weights_path);
  return {cfg.model, init_weights(cfg.model, cfg.weights_seed.value_or(cfg.seed))};
}

inline TokenSeq resolve_tokens(const ExperimentConfig& cfg, const ModelConfig& model) {
  TokenSeq t = cfg.tokens.empty() ? ToyTokenizer{model.vocab_size}.encode(cfg.prompt) : cfg.tokens;
  if (t.empty()) throw ConfigError("input is empty: set input.prompt or input.tokens");
  validate_tokens(t, model);
  return t;
}

inline ArmConfig arm_config_for(const ExperimentConfig& cfg) {
  ArmConfig a = cfg.arm.config;
  a.seed = cfg.seed;
  return a;
}

inline std::vector<nlohmann::json> report_lines(const std::vector<ArmReport>& reports) {
  std::vector<nlohmann::json> out;
  for (const auto& r : reports) out.push_back(to_json(r));
  return out;
}

inline nlohmann::json tokens_json(std::span<const TokenId> t) { return nlohmann::json(std::vector<TokenId>(t.begin(), t.end())); }

// ---------------------------------------------------------------------------
// Commands. Each returns the process exit code.

inline int cmd_init_model(const ExperimentConfig& cfg, const RunOptions& opt) {
  RunWriter out("init-model", cfg, opt);
  const ModelWeights w = init_weights(cfg.model, cfg.weights_seed.value_or(cfg.seed));
  const WeightFiles files = save_weights(out.path("model"), w, cfg.model);
  out.record(files.manifest);
  out.record(files.blob);
  out.finish(true);
  return 0;
}

inline int cmd_forward(const ExperimentConfig& cfg, const RunOptions& opt) {
  RunWriter out("forward", cfg, opt);
  const LoadedModel m = resolve_model(cfg);
  const TokenSeq tokens = resolve_tokens(cfg, m.config);

  std::optional<ArmHook> arm;
  HookSpec spec;
  ForwardOptions fo;
  if (cfg.arm.enabled) {
    arm.emplace(arm_config_for(cfg));
    spec = arm->spec(cfg.arm.layer, cfg.arm.prompt_only);
    fo.mlp_hook = &spec;
  }
  const ForwardTrace tr = forward(tokens, m.weights, m.config, fo);

  std::vector<CsvRow> rows;
  CsvRow header = {"position"};
  for (std::size_t v = 0; v < m.config.vocab_size; ++v) header.push_back("logit_" + std::to_string(v));
  std::vector<TokenId> next;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    CsvRow r = {std::to_string(t)};
    for (float x : tr.logits.row(t)) r.push_back(fmt_num(x));
    rows.push_back(std::move(r));
    next.push_back(argmax(tr.logits.row(t)));
  }
  out.csv("logits.csv", header, rows);

  nlohmann::json layers = nlohmann::json::array();
  for (const auto& L : tr.layers) {
    layers.push_back({{"mlp_l1_pre_hook", l1_norm(L.mlp_activation_pre_hook.data())},
                      {"mlp_l1_post_hook", l1_norm(L.mlp_activation_post_hook.data())},
                      {"mlp_l2_pre_hook", l2_norm(L.mlp_activation_pre_hook.data())},
                      {"mlp_l2_post_hook", l2_norm(L.mlp_activation_post_hook.data())}});
  }
  out.json("forward.json", {{"tokens", tokens_json(tokens)},
                            {"next_token_argmax", next},
                            {"arm_enabled", cfg.arm.enabled},
                            {"layers", layers}});
  if (arm) out.jsonl("arm_reports.jsonl", report_lines(arm->reports()));
  out.finish(true);
  return 0;
}

namespace detail {

inline DecodePolicy policy_for(const ExperimentConfig& cfg, std::size_t sample_index) {
  if (!cfg.decode.sample) return DecodePolicy::greedy();
  return DecodePolicy::sample(cfg.decode.temperature, cfg.decode.top_p,
                              RngStream(cfg.seed).substream(sample_index).next_u64());
}

struct Generation {
  TokenSeq sequence;
  std::vector<ArmReport> reports;
};

inline Generation generate(const ExperimentConfig& cfg, const LoadedModel& m, std::span<const TokenId> prompt,
                           std::size_t sample_index) {
  Generation g;
  std::optional<ArmHook> arm;
  HookSpec spec;
  if (cfg.arm.enabled) {
    ArmConfig a = arm_config_for(cfg);
    a.seed = RngStream(a.seed).substream(sample_index).next_u64();
    arm.emplace(a);
    spec = arm->spec(cfg.arm.layer, cfg.arm.prompt_only);
  }
  g.sequence = decode(prompt, m.weights, m.config, arm ? &spec : nullptr, policy_for(cfg, sample_index),
                      cfg.decode.max_new);
  if (arm) g.reports = arm->reports();
  return g;
}

inline std::size_t n_generations(const ExperimentConfig& cfg) { return cfg.decode.sample ? cfg.decode.samples : 1; }

}  // namespace detail

inline int cmd_decode(const ExperimentConfig& cfg, const RunOptions& opt) {
  RunWriter out("decode", cfg, opt);
  const LoadedModel m = resolve_model(cfg);
  const TokenSeq prompt = resolve_tokens(cfg, m.config);
  if (prompt.size() + cfg.decode.max_new > m.config.max_seq) {
    throw ConfigError("prompt length plus decode.max_new exceeds model.max_seq");
  }
  nlohmann::json gens = nlohmann::json::array();
  std::vector<nlohmann::json> reports;
  std::vector<TokenSeq> generated;
  for (std::size_t i = 0; i < detail::n_generations(cfg); ++i) {
    detail::Generation g = detail::generate(cfg, m, prompt, i);
    const TokenSeq tail(g.sequence.begin() + static_cast<std::ptrdiff_t>(prompt.size()), g.sequence.end());
    gens.push_back({{"index", i}, {"generated", tail}});
    for (auto& j : report_lines(g.reports)) {
      j["sample"] = i;
      reports.push_back(std::move(j));
    }
    generated.push_back(tail);
  }
  const DiversityScore d = ngram_diversity(generated, cfg.analysis.ngram);
  out.json("decode.json", {{"prompt", tokens_json(prompt)},
                           {"policy", cfg.decode.sample ? "sample" : "greedy"},
                           {"generations", gens},
                           {"diversity", {{"n", cfg.analysis.ngram}, {"distinct", d.distinct_n}, {"total", d.total_n},
                                          {"ratio", d.ratio}}}});
  if (cfg.arm.enabled) out.jsonl("arm_reports.jsonl", reports);
  out.finish(true);
  return 0;
}

inline InsertionSpec insertion_spec_for(const ExperimentConfig& cfg, const ModelConfig& model) {
  InsertionSpec s;
  s.token_id = ToyTokenizer{model.vocab_size}.id_of(cfg.insertion.token);
  s.count = cfg.insertion.count;
  s.position = cfg.insertion.position;
  s.boundary_index = cfg.insertion.boundary;
  s.seed = derive_seed(cfg.seed, stream::kInsertion);
  return s;
}

inline int cmd_mless(const ExperimentConfig& cfg, const RunOptions& opt) {
  RunWriter out("mless", cfg, opt);
  const LoadedModel m = resolve_model(cfg);
  const TokenSeq tokens = resolve_tokens(cfg, m.config);
  const InsertionSpec spec = insertion_spec_for(cfg, m.config);
  const std::size_t layer = cfg.insertion.layer, head = cfg.insertion.head;
  if (layer >= m.config.n_layers || head >= m.config.n_heads) throw ConfigError("insertion layer/head out of range");

  const SweepResult sweep = sweep_lengths(tokens, spec, cfg.insertion.counts, m.weights, m.config, layer);
  std::vector<CsvRow> rows;
  for (const auto& r : sweep.rows) {
    rows.push_back({std::to_string(r.k), fmt_num(r.lambda_mean), fmt_num(r.sigma_l2_mean), fmt_num(r.residual_mean)});
  }
  out.csv("sweep.csv", {"k", "lambda_mean", "sigma_l2_mean", "residual_mean"}, rows);
  nlohmann::json coh = nlohmann::json::array();
  for (const auto& r : sweep.rows) coh.push_back({{"k", r.k}, {"coherence_mean", r.coherence_mean}});
  out.json("sweep.json", {{"counts", cfg.insertion.counts},
                          {"lambda_nonincreasing", sweep.lambda_nonincreasing},
                          {"sigma_nondecreasing", sweep.sigma_nondecreasing},
                          {"coherence", coh}});

  const EmulationRun run = run_insertion(tokens, spec, m.weights, m.config);
  const EmulationResult res = analyze_head(run, layer, head);
  const LambdaAggregates agg = aggregate_lambda(run, layer);
  std::vector<CsvRow> resid;
  for (std::size_t t = 0; t < res.residuals.size(); ++t) {
    resid.push_back({std::to_string(t), fmt_num(res.params.lambda[t]), fmt_num(res.filler_mass[t]),
                     fmt_num(agg.per_token[t]), fmt_num(res.residuals[t])});
  }
  out.csv("residuals.csv", {"position", "lambda", "filler_mass", "lambda_head_mean", "residual"}, resid);
  out.json("emulation.json", {{"layer", layer},
                              {"head", head},
                              {"count", spec.count},
                              {"position", to_string(spec.position)},
                              {"insert_at", run.insertion.insert_at},
                              {"mean_residual", res.mean_residual},
                              {"max_residual", res.max_residual},
                              {"max_mass_error", res.max_mass_error},
                              {"coherence", res.coherence},
                              {"lambda", {{"mean", res.lambda.mean}, {"min", res.lambda.min}, {"max", res.lambda.max}}},
                              {"lambda_layer_mean", agg.mean}});
  out.finish(true);
  return 0;
}

inline int cmd_analyze(const ExperimentConfig& cfg, const RunOptions& opt) {
  RunWriter out("analyze", cfg, opt);
  const LoadedModel m = resolve_model(cfg);
  const TokenSeq tokens = resolve_tokens(cfg, m.config);
  const std::size_t layer = cfg.arm.layer;

  std::optional<ArmHook> arm;
  HookSpec spec;
  ForwardOptions fo;
  if (cfg.arm.enabled) {
    arm.emplace(arm_config_for(cfg));
    spec = arm->spec(layer, false);
    fo.mlp_hook = &spec;
  }
  const ForwardTrace tr = forward(tokens, m.weights, m.config, fo);
  const Tensor& before = tr.layers.at(layer).mlp_activation_pre_hook;
  const Tensor& after = tr.layers.at(layer).mlp_activation_post_hook;

  out.json("metrics.json", to_json(activation_metrics(before.data(), after.data(), cfg.analysis.q, cfg.analysis.hist)));

  // Both histograms share the binning of the baseline.
  const Histogram hb = histogram(before, cfg.analysis.hist);
  HistogramSpec shared = cfg.analysis.hist;
  shared.range = HistRange::fixed;
  shared.lo = hb.edges.front();
  shared.hi = hb.edges.back();
  const Histogram ha = histogram(after, shared);
  std::vector<CsvRow> hrows;
  for (std::size_t b = 0; b < hb.counts.size(); ++b) {
    hrows.push_back({fmt_num(hb.edges[b]), fmt_num(hb.edges[b + 1]), std::to_string(hb.counts[b]),
                     std::to_string(ha.counts[b])});
  }
  out.csv("histogram.csv", {"bin_lo", "bin_hi", "count_before", "count_after"}, hrows);

  const AttentionProfile prof = attention_profile(tr.layers.at(0));
  std::vector<CsvRow> prows;
  for (std::size_t j = 0; j < prof.mean.size(); ++j) prows.push_back({std::to_string(j), fmt_num(prof.mean[j])});
  out.csv("profile.csv", {"position", "score"}, prows);

  // Token classes need the text pieces, so they are only available for text prompts.
  if (cfg.tokens.empty()) {
    const auto pieces = ToyTokenizer::split(cfg.prompt);
    const auto props = near_zero_proportion_by_class(tr, pieces, cfg.analysis.epsilon);
    std::vector<CsvRow> crows;
    for (const auto& [cls, v] : props) crows.push_back({to_string(cls), fmt_num(v)});
    out.csv("class_proportions.csv", {"class", "near_zero_proportion"}, crows);
  }

  std::vector<TokenSeq> generated;
  for (std::size_t i = 0; i < detail::n_generations(cfg); ++i) {
    if (tokens.size() + cfg.decode.max_new > m.config.max_seq) break;
    const TokenSeq s = detail::generate(cfg, m, tokens, i).sequence;
    generated.emplace_back(s.begin() + static_cast<std::ptrdiff_t>(tokens.size()), s.end());
  }
  std::vector<CsvRow> drows;
  for (std::size_t n = 1; n <= cfg.analysis.ngram; ++n) {
    const DiversityScore d = ngram_diversity(generated, n);
    drows.push_back({std::to_string(n), std::to_string(d.distinct_n), std::to_string(d.total_n), fmt_num(d.ratio)});
  }
  out.csv("diversity.csv", {"n", "distinct", "total", "ratio"}, drows);

  theory::PerturbationSpec pert{cfg.analysis.lambda, cfg.analysis.bias_sigma};
  const theory::RedistributionResult red =
      theory::redistribution_experiment(m.weights, m.config, tokens, pert, cfg.analysis.trials,
                                        cfg.seed, cfg.analysis.q, cfg.analysis.hist.n_bins);
  out.json("redistribution.json", {{"lambda", pert.lambda},
                                   {"bias_sigma", pert.bias_sigma},
                                   {"trials", red.n_trials},
                                   {"before", to_json(red.before)},
                                   {"after", to_json(red.after)}});
  if (arm) out.jsonl("arm_reports.jsonl", report_lines(arm->reports()));
  out.finish(true);
  return 0;
}

inline int cmd_verify_theory(const ExperimentConfig& cfg, const RunOptions& opt) {
  RunWriter out("verify-theory", cfg, opt);
  theory::TheoryOptions to;
  to.seed = cfg.seed;
  to.n_samples = cfg.theory_samples;
  to.threads = opt.threads;
  to.tol_override = opt.tol;
  const auto checks = theory::verify_theory(to);
  nlohmann::json arr = nlohmann::json::array();
  std::size_t failed = 0;
  for (const auto& c : checks) {
    arr.push_back(theory::to_json(c));
    failed += !c.pass;
  }
  out.json("theory.json", {{"checks", arr}, {"n_checks", checks.size()}, {"n_failed", failed}, {"all_pass", failed == 0}});
  out.finish(failed == 0);
  return failed == 0 ? 0 : 1;
}

struct BenchResult {
  double t_mlp = 0.0;
  double t_arm = 0.0;
  double ratio = 0.0;
};

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Median wall-clock seconds of one MLP block (no hook) and of one ARM
// application to that block's activation tensor.
inline BenchResult bench_overhead(const ModelConfig& model, std::size_t seq_len, std::size_t reps, std::size_t warmup,
                                  const std::optional<ArmConfig>& arm, std::uint64_t seed) {
  ModelConfig one = model;
  one.n_layers = 1;
  one.max_seq = std::max(one.max_seq, seq_len);
  const ModelWeights w = init_weights(one, seed);
  RngStream rng(derive_seed(seed, stream::kData));
  Tensor x({seq_len, one.d_model});
  for (auto& v : x.data()) v = static_cast<float>(normal(rng));
  const Tensor acts = mlp_block(x, w.layers[0], one).activation;

  using clock = std::chrono::steady_clock;
  auto seconds = [](clock::time_point a, clock::time_point b) { return std::chrono::duration<double>(b - a).count(); };
  std::vector<double> t_mlp, t_arm;
  RngStream arm_rng(derive_seed(seed, stream::kArm));
  ArmWorkspace ws;
  for (std::size_t r = 0; r < warmup + reps; ++r) {
    const auto a = clock::now();
    const MlpResult res = mlp_block(x, w.layers[0], one);
    const auto b = clock::now();
    if (r >= warmup) t_mlp.push_back(seconds(a, b));
    if (arm) {
      const auto c = clock::now();
      const ArmResult ar = apply(acts, *arm, arm_rng, ws);
      const auto d = clock::now();
      if (r >= warmup) t_arm.push_back(seconds(c, d));
      if (ar.activations.size() != res.activation.size()) throw Error("bench: shape mismatch");
    }
  }
  BenchResult out;
  out.t_mlp = median_of(t_mlp);
  out.t_arm = arm ? median_of(t_arm) : 0.0;
  out.ratio = out.t_arm / out.t_mlp;
  return out;
}

inline int cmd_bench_overhead(const ExperimentConfig& cfg, const RunOptions& opt) {
  RunWriter out("bench-overhead", cfg, opt);
  std::optional<ArmConfig> arm;
  if (cfg.arm.enabled) arm = arm_config_for(cfg);
  const BenchResult b = bench_overhead(cfg.model, cfg.bench.seq_len, cfg.bench.reps, cfg.bench.warmup, arm, cfg.seed);
  out.json("bench.json", {{"config_hash", out.config_hash_hex()},
                          {"arm_enabled", cfg.arm.enabled},
                          {"d_model", cfg.model.d_model},
                          {"d_ff", cfg.model.d_ff},
                          {"seq_len", cfg.bench.seq_len},
                          {"reps", cfg.bench.reps},
                          {"warmup", cfg.bench.warmup},
                          {"t_mlp_median_s", b.t_mlp},
                          {"t_arm_median_s", b.t_arm},
                          {"ratio", b.ratio}});
  out.finish(true);
  return 0;
}

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"init-model", "forward", "decode", "mless", "analyze",
                                                 "verify-theory", "bench-overhead"};
  return names;
}

inline int run_command(const std::string& name, const ExperimentConfig& cfg, const RunOptions& opt) {
  cfg.validate();
  if (name == "init-model") return cmd_init_model(cfg, opt);
  if (name == "forward") return cmd_forward(cfg, opt);
  if (name == "decode") return cmd_decode(cfg, opt);
  if (name == "mless") return cmd_mless(cfg, opt);
  if (name == "analyze") return cmd_analyze(cfg, opt);
  if (name == "verify-theory") return cmd_verify_theory(cfg, opt);
  if (name == "bench-overhead") return cmd_bench_overhead(cfg, opt);
  throw ConfigError("unknown command '" + name + "'");
}

}  // namespace armkit

#pragma once

// Experiment configuration.
//
// File format: sectioned `key = value` text. `#` starts a comment; blank lines
// are ignored; lists are comma separated. Every key has a fixed type, and an
// unknown section or key is an error.
//
//   [run]       seed, output_dir
//   [model]     n_layers, d_model, d_ff, n_heads, vocab_size, max_seq, activation, norm_eps
//   [weights]   seed | path
//   [arm]       enabled, mode, c, kappa, p_min, p_max, p1, p, scope, layer, prompt_only
//   [insertion] enabled, token, count, position, boundary, counts, layer, head
//   [analysis]  bins, range, lo, hi, q, epsilon, ngram, lambda, bias_sigma, trials
//   [theory]    n_samples
//   [input]     prompt, tokens
//   [decode]    max_new, policy, temperature, top_p, samples
//   [bench]     seq_len, reps, warmup

#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <locale>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "armkit/arm.hpp"
#include "armkit/analytics.hpp"
#include "armkit/error.hpp"
#include "armkit/mless.hpp"
#include "armkit/model.hpp"
#include "armkit/weights_io.hpp"

namespace armkit {

struct ArmSettings {
  bool enabled = false;
  ArmConfig config;
  std::size_t layer = 0;
  bool prompt_only = false;
};

struct InsertionSettings {
  bool enabled = false;
  std::string token = "/";
  std::size_t count = 8;
  InsertPosition position = InsertPosition::begin;
  std::optional<std::size_t> boundary;
  std::vector<std::size_t> counts = {0, 1, 8, 64};
  std::size_t layer = 0;
  std::size_t head = 0;
};

struct AnalysisSettings {
  HistogramSpec hist;
  double q = 50.0;
  double epsilon = 0.01;
  std::size_t ngram = 2;
  double lambda = 0.9;
  double bias_sigma = 0.2;
  std::size_t trials = 8;
};

struct DecodeSettings {
  std::size_t max_new = 16;
  bool sample = false;
  double temperature = 0.5;
  double top_p = 0.95;
  std::size_t samples = 4;
};

struct BenchSettings {
  std::size_t seq_len = 256;
  std::size_t reps = 30;
  std::size_t warmup = 3;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  ModelConfig model;
  std::optional<std::uint64_t> weights_seed;  // defaults to `seed`
  std::string weights_path;                   // when set, weights are loaded instead of initialized
  ArmSettings arm;
  InsertionSettings insertion;
  AnalysisSettings analysis;
  std::size_t theory_samples = 1'000'000;
  std::string prompt = "Compute 12 + 7 and then 3 * 4 .";
  std::vector<TokenId> tokens;  // overrides prompt when non-empty
  DecodeSettings decode;
  BenchSettings bench;

  void validate() const;
};

namespace detail {

inline std::string trim_copy(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::uint64_t parse_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return out;
}

inline double parse_f64(const std::string& v) {
  std::istringstream in(v);
  in.imbue(std::locale::classic());
  double out = 0.0;
  in >> out;
  if (in.fail() || !in.eof() || !std::isfinite(out)) throw ConfigError("expected a finite number, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("expected a boolean, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto end = comma == std::string::npos ? v.size() : comma;
    std::string item = trim_copy(std::string_view(v).substr(start, end - start));
    if (!item.empty()) out.push_back(std::move(item));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
std::vector<T> parse_uint_list(const std::string& v) {
  std::vector<T> out;
  for (const auto& s : split_list(v)) out.push_back(static_cast<T>(parse_u64(s)));
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

inline const std::map<std::string, std::map<std::string, Setter>>& schema() {
  using C = ExperimentConfig;
  static const std::map<std::string, std::map<std::string, Setter>> s = {
      {"run",
       {{"seed", [](C& c, const std::string& v) { c.seed = parse_u64(v); }},
        {"output_dir", [](C& c, const std::string& v) { c.output_dir = v; }}}},
      {"model",
       {{"n_layers", [](C& c, const std::string& v) { c.model.n_layers = parse_u64(v); }},
        {"d_model", [](C& c, const std::string& v) { c.model.d_model = parse_u64(v); }},
        {"d_ff", [](C& c, const std::string& v) { c.model.d_ff = parse_u64(v); }},
        {"n_heads", [](C& c, const std::string& v) { c.model.n_heads = parse_u64(v); }},
        {"vocab_size", [](C& c, const std::string& v) { c.model.vocab_size = parse_u64(v); }},
        {"max_seq", [](C& c, const std::string& v) { c.model.max_seq = parse_u64(v); }},
        {"activation", [](C& c, const std::string& v) { c.model.activation = parse_activation(v); }},
        {"norm_eps", [](C& c, const std::string& v) { c.model.norm_eps = static_cast<float>(parse_f64(v)); }}}},
      {"weights",
       {{"seed", [](C& c, const std::string& v) { c.weights_seed = parse_u64(v); }},
        {"path", [](C& c, const std::string& v) { c.weights_path = v; }}}},
      {"arm",
       {{"enabled", [](C& c, const std::string& v) { c.arm.enabled = parse_bool(v); }},
        {"mode",
         [](C& c, const std::string& v) {
           if (v == "mad") {
             c.arm.config.mode = ArmMode::mad_threshold;
           } else if (v == "direct_p") {
             c.arm.config.mode = ArmMode::direct_p;
           } else {
             throw ConfigError("arm.mode must be 'mad' or 'direct_p', got '" + v + "'");
           }
         }},
        {"c", [](C& c, const std::string& v) { c.arm.config.c = parse_f64(v); }},
        {"kappa", [](C& c, const std::string& v) { c.arm.config.kappa = parse_f64(v); }},
        {"p_min", [](C& c, const std::string& v) { c.arm.config.p_min = parse_f64(v); }},
        {"p_max", [](C& c, const std::string& v) { c.arm.config.p_max = parse_f64(v); }},
        {"p1", [](C& c, const std::string& v) { c.arm.config.p1 = parse_f64(v); }},
        {"p", [](C& c, const std::string& v) { c.arm.config.p = parse_f64(v); }},
        {"scope",
         [](C& c, const std::string& v) {
           if (v == "tensor") {
             c.arm.config.scope = ArmScope::tensor;
           } else if (v == "row") {
             c.arm.config.scope = ArmScope::row;
           } else {
             throw ConfigError("arm.scope must be 'tensor' or 'row', got '" + v + "'");
           }
         }},
        {"layer", [](C& c, const std::string& v) { c.arm.layer = parse_u64(v); }},
        {"prompt_only", [](C& c, const std::string& v) { c.arm.prompt_only = parse_bool(v); }}}},
      {"insertion",
       {{"enabled", [](C& c, const std::string& v) { c.insertion.enabled = parse_bool(v); }},
        {"token", [](C& c, const std::string& v) { c.insertion.token = v; }},
        {"count", [](C& c, const std::string& v) { c.insertion.count = parse_u64(v); }},
        {"position", [](C& c, const std::string& v) { c.insertion.position = parse_insert_position(v); }},
        {"boundary", [](C& c, const std::string& v) { c.insertion.boundary = parse_u64(v); }},
        {"counts", [](C& c, const std::string& v) { c.insertion.counts = parse_uint_list<std::size_t>(v); }},
        {"layer", [](C& c, const std::string& v) { c.insertion.layer = parse_u64(v); }},
        {"head", [](C& c, const std::string& v) { c.insertion.head = parse_u64(v); }}}},
      {"analysis",
       {{"bins", [](C& c, const std::string& v) { c.analysis.hist.n_bins = parse_u64(v); }},
        {"range",
         [](C& c, const std::string& v) {
           if (v == "symmetric") {
             c.analysis.hist.range = HistRange::symmetric;
           } else if (v == "auto") {
             c.analysis.hist.range = HistRange::auto_minmax;
           } else if (v == "fixed") {
             c.analysis.hist.range = HistRange::fixed;
           } else {
             throw ConfigError("analysis.range must be 'symmetric', 'auto' or 'fixed', got '" + v + "'");
           }
         }},
        {"lo", [](C& c, const std::string& v) { c.analysis.hist.lo = parse_f64(v); }},
        {"hi", [](C& c, const std::string& v) { c.analysis.hist.hi = parse_f64(v); }},
        {"q", [](C& c, const std::string& v) { c.analysis.q = parse_f64(v); }},
        {"epsilon", [](C& c, const std::string& v) { c.analysis.epsilon = parse_f64(v); }},
        {"ngram", [](C& c, const std::string& v) { c.analysis.ngram = parse_u64(v); }},
        {"lambda", [](C& c, const std::string& v) { c.analysis.lambda = parse_f64(v); }},
        {"bias_sigma", [](C& c, const std::string& v) { c.analysis.bias_sigma = parse_f64(v); }},
        {"trials", [](C& c, const std::string& v) { c.analysis.trials = parse_u64(v); }}}},
      {"theory", {{"n_samples", [](C& c, const std::string& v) { c.theory_samples = parse_u64(v); }}}},
      {"input",
       {{"prompt", [](C& c, const std::string& v) { c.prompt = v; }},
        {"tokens", [](C& c, const std::string& v) { c.tokens = parse_uint_list<TokenId>(v); }}}},
      {"decode",
       {{"max_new", [](C& c, const std::string& v) { c.decode.max_new = parse_u64(v); }},
        {"policy",
         [](C& c, const std::string& v) {
           if (v == "greedy") {
             c.decode.sample = false;
           } else if (v == "sample") {
             c.decode.sample = true;
           } else {
             throw ConfigError("decode.policy must be 'greedy' or 'sample', got '" + v + "'");
           }
         }},
        {"temperature", [](C& c, const std::string& v) { c.decode.temperature = parse_f64(v); }},
        {"top_p", [](C& c, const std::string& v) { c.decode.top_p = parse_f64(v); }},
        {"samples", [](C& c, const std::string& v) { c.decode.samples = parse_u64(v); }}}},
      {"bench",
       {{"seq_len", [](C& c, const std::string& v) { c.bench.seq_len = parse_u64(v); }},
        {"reps", [](C& c, const std::string& v) { c.bench.reps = parse_u64(v); }},
        {"warmup", [](C& c, const std::string& v) { c.bench.warmup = parse_u64(v); }}}},
  };
  return s;
}

}  // namespace detail

// Applies `key = value` lines to `cfg`. `origin` names the source in errors.
inline void apply_config_text(ExperimentConfig& cfg, std::string_view text, const std::string& origin = "<config>") {
  const auto& schema = detail::schema();
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    const auto hash = raw.find('#');
    const std::string line = detail::trim_copy(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header '" + line + "'");
      section = detail::trim_copy(std::string_view(line).substr(1, line.size() - 2));
      if (!schema.contains(section)) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
    if (section.empty()) throw ConfigError(where + "key outside of any section");
    const std::string key = detail::trim_copy(std::string_view(line).substr(0, eq));
    const std::string value = detail::trim_copy(std::string_view(line).substr(eq + 1));
    const auto& keys = schema.at(section);
    const auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError(where + "unknown key '" + key + "' in [" + section + "]");
    try {
      it->second(cfg, value);
    } catch (const Error& e) {
      throw ConfigError(where + section + "." + key + ": " + e.what());
    }
  }
}

inline ExperimentConfig load_config_file(const std::filesystem::path& path, ExperimentConfig base = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(base, ss.str(), path.string());
  return base;
}

// ARM hyperparameter presets taken from published per-model settings.
struct Preset {
  std::string_view name;
  ArmMode mode;
  double c_or_p;
  double p1;
  std::string_view note;
};

inline constexpr std::array<Preset, 5> kPresets = {{
    {"mathlike-small", ArmMode::mad_threshold, 0.13, 99.5, "small math model, c=0.13 p1=99.5"},
    {"mathlike-large", ArmMode::mad_threshold, 0.10, 95.0, "larger math model, c=0.10 p1=95.0"},
    {"llamalike", ArmMode::mad_threshold, 0.32, 90.0, "flatter activations, c=0.32 p1=90.0"},
    {"direct-p", ArmMode::direct_p, 0.25, 85.0, "fixed fraction p=0.25 p1=85.0"},
    {"direct-p-high", ArmMode::direct_p, 0.50, 96.5, "fixed fraction p=0.5 p1=96.5"},
}};

inline void apply_preset(ExperimentConfig& cfg, std::string_view name) {
  for (const auto& p : kPresets) {
    if (p.name != name) continue;
    cfg.arm.enabled = true;
    cfg.arm.config.mode = p.mode;
    if (p.mode == ArmMode::direct_p) {
      cfg.arm.config.p = p.c_or_p;
    } else {
      cfg.arm.config.c = p.c_or_p;
    }
    cfg.arm.config.p1 = p.p1;
    return;
  }
  std::string known;
  for (const auto& p : kPresets) known += (known.empty() ? "" : ", ") + std::string(p.name);
  throw ConfigError("unknown preset '" + std::string(name) + "' (known: " + known + ")");
}

inline void ExperimentConfig::validate() const {
  model.validate();
  arm.config.validate();
  if (arm.layer >= model.n_layers) throw ConfigError("arm.layer is out of range for the model");
  if (insertion.layer >= model.n_layers) throw ConfigError("insertion.layer is out of range for the model");
  if (insertion.head >= model.n_heads) throw ConfigError("insertion.head is out of range for the model");
  if (insertion.position == InsertPosition::between && !insertion.boundary) {
    throw ConfigError("insertion.position = between requires insertion.boundary");
  }
  if (analysis.hist.n_bins == 0) throw ConfigError("analysis.bins must be >= 1");
  if (analysis.hist.range == HistRange::fixed && !(analysis.hist.lo < analysis.hist.hi)) {
    throw ConfigError("analysis.lo must be below analysis.hi");
  }
  if (!(analysis.q >= 0.0 && analysis.q <= 100.0)) throw ConfigError("analysis.q must lie in [0, 100]");
  if (!(analysis.epsilon >= 0.0)) throw ConfigError("analysis.epsilon must be non-negative");
  if (analysis.ngram == 0) throw ConfigError("analysis.ngram must be >= 1");
  if (analysis.trials == 0) throw ConfigError("analysis.trials must be >= 1");
  if (theory_samples < 2) throw ConfigError("theory.n_samples must be >= 2");
  if (decode.sample && !(decode.temperature > 0.0)) throw ConfigError("decode.temperature must be positive");
  if (!(decode.top_p > 0.0 && decode.top_p <= 1.0)) throw ConfigError("decode.top_p must lie in (0, 1]");
  if (bench.reps < 30) throw ConfigError("bench.reps must be >= 30");
  if (bench.seq_len == 0) throw ConfigError("bench.seq_len must be >= 1");
  if (!weights_path.empty() && !std::filesystem::exists(weights_path)) {
    throw ConfigError("weights.path '" + weights_path + "' does not exist");
  }
}

// Canonical form of the effective configuration; its hash identifies a run.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["model"] = model_config_to_json(c.model);
  j["weights"] = {{"seed", c.weights_seed ? nlohmann::json(*c.weights_seed) : nlohmann::json()},
                  {"path", c.weights_path}};
  const ArmConfig& a = c.arm.config;
  j["arm"] = {{"enabled", c.arm.enabled},
              {"mode", a.mode == ArmMode::direct_p ? "direct_p" : "mad"},
              {"c", a.c},
              {"kappa", a.kappa},
              {"p_min", a.p_min},
              {"p_max", a.p_max},
              {"p1", a.p1},
              {"p", a.p},
              {"scope", a.scope == ArmScope::row ? "row" : "tensor"},
              {"layer", c.arm.layer},
              {"prompt_only", c.arm.prompt_only}};
  j["insertion"] = {{"enabled", c.insertion.enabled},
                    {"token", c.insertion.token},
                    {"count", c.insertion.count},
                    {"position", to_string(c.insertion.position)},
                    {"boundary", c.insertion.boundary ? nlohmann::json(*c.insertion.boundary) : nlohmann::json()},
                    {"counts", c.insertion.counts},
                    {"layer", c.insertion.layer},
                    {"head", c.insertion.head}};
  const char* range = c.analysis.hist.range == HistRange::fixed       ? "fixed"
                      : c.analysis.hist.range == HistRange::auto_minmax ? "auto"
                                                                        : "symmetric";
  j["analysis"] = {{"bins", c.analysis.hist.n_bins}, {"range", range},
                   {"lo", c.analysis.hist.lo},       {"hi", c.analysis.hist.hi},
                   {"q", c.analysis.q},              {"epsilon", c.analysis.epsilon},
                   {"ngram", c.analysis.ngram},      {"lambda", c.analysis.lambda},
                   {"bias_sigma", c.analysis.bias_sigma}, {"trials", c.analysis.trials}};
  j["theory"] = {{"n_samples", c.theory_samples}};
  j["input"] = {{"prompt", c.prompt}, {"tokens", c.tokens}};
  j["decode"] = {{"max_new", c.decode.max_new},
                 {"policy", c.decode.sample ? "sample" : "greedy"},
                 {"temperature", c.decode.temperature},
                 {"top_p", c.decode.top_p},
                 {"samples", c.decode.samples}};
  j["bench"] = {{"seq_len", c.bench.seq_len}, {"reps", c.bench.reps}, {"warmup", c.bench.warmup}};
  return j;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string config_hash(const ExperimentConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(c).dump())));
  return buf;
}

}  // namespace armkit

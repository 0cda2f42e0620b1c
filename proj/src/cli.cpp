// Copyright 2026 The fmxcoders Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fmx/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "fmx/checkpoint.hpp"
#include "fmx/config.hpp"
#include "fmx/diagnostics.hpp"
#include "fmx/errors.hpp"
#include "fmx/experiment.hpp"
#include "fmx/judge.hpp"
#include "fmx/probing.hpp"
#include "fmx/synth_data.hpp"
#include "fmx/training.hpp"
#include "json.hpp"

namespace fmx {

namespace {

namespace fs = std::filesystem;

// Sample draws use a stream distinct from the feature-direction stream even
// when both seeds are equal.
constexpr std::uint64_t kSampleStream = 0x9e3779b97f4a7c15ULL;

struct Context {
  Config cfg;
  fs::path out_dir;
  std::ostream& out;
};

fs::path output_path(const Context& ctx, const std::string& key, const std::string& fallback) {
  return ctx.cfg.is_set(key) ? fs::path(ctx.cfg.str(key)) : ctx.out_dir / fallback;
}

fs::path data_cache(const Context& ctx) { return output_path(ctx, "data.cache", "activations.fmxa"); }

fs::path eval_cache(const Context& ctx) {
  return ctx.cfg.is_set("eval.cache") ? fs::path(ctx.cfg.str("eval.cache")) : data_cache(ctx);
}

fs::path checkpoint_path(const Context& ctx) {
  return output_path(ctx, "model.checkpoint", "model.fmxc");
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

// Resolved config next to the command's outputs.
void record_config(const Context& ctx, const std::string& command) {
  ctx.cfg.write_file(ctx.out_dir / (command + ".config"));
}

SynthConfig synth_config(const Config& cfg) {
  SynthConfig sc;
  sc.d = cfg.count("data.d");
  sc.layers = cfg.count("data.layers");
  sc.single_layer_features = cfg.count("data.single");
  sc.cross_layer_features = cfg.count("data.cross");
  sc.cross_support = cfg.count("data.cross_support");
  const auto& policy = cfg.str("data.policy");
  if (policy == "shared") {
    sc.policy = DirectionPolicy::kShared;
  } else if (policy == "independent") {
    sc.policy = DirectionPolicy::kIndependent;
  } else {
    throw ConfigError("data.policy: expected shared or independent, got \"" + policy + "\"");
  }
  sc.firing_prob = cfg.real("data.firing_prob");
  sc.magnitude_mu = cfg.real("data.magnitude_mu");
  sc.magnitude_sigma = cfg.real("data.magnitude_sigma");
  sc.noise_sigma = cfg.real("data.noise");
  sc.orthogonal = cfg.flag("data.orthogonal");
  if (cfg.is_set("data.concept")) {
    sc.concept_feature = cfg.count("data.concept");
  } else if (cfg.flag("data.labels")) {
    // First cross-layer feature, else feature 0.
    sc.concept_feature = sc.cross_layer_features > 0 ? sc.single_layer_features : 0;
  }
  return sc;
}

SparsifyMode eval_mode(const Config& cfg) {
  auto mode = parse_sparsify_mode(cfg.str("eval.mode"));
  if (mode.kind == SparsifyMode::Kind::kBatchTopK) mode.chunk = cfg.count("eval.chunk");
  return mode;
}

TrainConfig train_config(const Config& cfg) {
  TrainConfig tc;
  tc.learning_rate = cfg.real("train.learning_rate");
  tc.beta1 = cfg.real("train.beta1");
  tc.beta2 = cfg.real("train.beta2");
  tc.epsilon = cfg.real("train.epsilon");
  tc.grad_clip_norm = cfg.real("train.grad_clip");
  tc.batch_size = cfg.count("train.batch_size");
  tc.steps = cfg.count("train.steps");
  tc.mask_p = cfg.real("train.mask_p");
  tc.seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  tc.log_every = cfg.count("train.log_every");
  tc.prefetch = cfg.count("train.prefetch");
  tc.validate();
  return tc;
}

std::array<std::size_t, 3> parse_ranks(const Config& cfg, const std::string& key) {
  std::array<std::size_t, 3> r{};
  std::vector<double> v = cfg.reals(key);
  if (v.size() != 3) throw ConfigError(key + ": expected three comma-separated ranks");
  for (std::size_t n = 0; n < 3; ++n) {
    if (!(v[n] >= 1.0) || v[n] != std::floor(v[n])) throw ConfigError(key + ": ranks must be positive integers");
    r[n] = static_cast<std::size_t>(v[n]);
  }
  return r;
}

// Variant from model.variant; "sae" is the single-layer dense case.
struct ModelChoice {
  Variant variant;
  bool sae;
};

ModelChoice model_choice(const Config& cfg) {
  const auto& name = cfg.str("model.variant");
  if (name == "sae") return {Variant::kDense, true};
  try {
    return {parse_variant(name), false};
  } catch (const ConfigError&) {
    throw ConfigError("model.variant: unknown variant \"" + name + "\" (crosscoder, tr, cp, sae)");
  }
}

// Restricts a multi-layer batch to the one layer a single-layer model reads.
ActivationBatch match_layers(const Config& cfg, const std::string& key, ActivationBatch data,
                             std::size_t model_layers) {
  if (cfg.is_set(key)) {
    return data.layer(cfg.count(key));
  }
  if (model_layers == 1 && data.layers() > 1) {
    throw ConfigError(key + " must name the layer for a single-layer model");
  }
  return data;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

// --- subcommands -----------------------------------------------------------

int cmd_generate(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const SynthConfig sc = synth_config(cfg);
  Rng spec_rng(static_cast<std::uint64_t>(cfg.integer("data.spec_seed")));
  const SynthSpec spec = build_spec(sc, spec_rng);
  Rng sample_rng(static_cast<std::uint64_t>(cfg.integer("seed")) ^ kSampleStream);
  const auto sample = generate(spec, cfg.count("data.tokens"), sample_rng,
                               cfg.count("data.sequence_length"));
  const auto path = data_cache(ctx);
  write_cache(sample.batch, path);
  record_config(ctx, "generate");
  ctx.out << "wrote " << path.string() << " (" << sample.batch.tokens() << " tokens, "
          << sample.batch.layers() << " layers, d=" << sample.batch.dim()
          << (sample.batch.labels() ? ", labels" : "") << ")\n";
  return kExitOk;
}

int cmd_train(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const ModelChoice choice = model_choice(cfg);
  const TrainConfig tc = train_config(cfg);
  ActivationBatch data = read_cache(data_cache(ctx));
  if (choice.sae) {
    if (!cfg.is_set("model.layer")) throw ConfigError("model.layer is required for variant sae");
    data = data.layer(cfg.count("model.layer"));
  }
  const WeightDims dims{data.dim(), cfg.count("model.d_sae"), data.layers()};
  std::array<std::size_t, 3> ranks{};
  if (choice.variant == Variant::kTr && cfg.is_set("model.ranks")) {
    ranks = parse_ranks(cfg, "model.ranks");
  } else if (choice.variant == Variant::kCp && cfg.is_set("model.cp_rank")) {
    ranks = {cfg.count("model.cp_rank"), 0, 0};
  } else {
    ranks = matched_ranks(dims, choice.variant, cfg.real("model.reduction"));
  }
  Rng init(static_cast<std::uint64_t>(cfg.integer("seed")));
  auto model = init_model(dims, choice.variant, ranks, cfg.count("model.k"), tc.mask_p, init);
  InMemorySource source(std::make_shared<const ActivationBatch>(std::move(data)), tc.seed,
                        cfg.count("train.epochs"));

  const fs::path log_path = ctx.out_dir / "train_log.ndjson";
  std::ofstream log = open_output(log_path);
  const auto result =
      train(std::move(model), source, tc, [&](const StepMetrics& s) { log << to_ndjson(s) << '\n'; });
  const auto ckpt = checkpoint_path(ctx);
  save_checkpoint(result.model, ckpt);
  record_config(ctx, "train");
  ctx.out << "variant=" << (choice.sae ? "sae" : to_string(choice.variant))
          << " param_count=" << param_count(result.model)
          << " weight_count=" << weight_count(result.model)
          << " dense_weight_count=" << 2 * dims.d * dims.d_sae * dims.layers
          << " steps=" << result.steps_run << (result.truncated ? " (data exhausted)" : "")
          << " final_loss=" << fmt(result.log.empty() ? NAN : result.log.back().loss) << '\n'
          << "wrote " << ckpt.string() << '\n';
  return kExitOk;
}

int cmd_eval(Context& ctx) {
  const auto mode = eval_mode(ctx.cfg);
  const auto model = load_checkpoint(checkpoint_path(ctx));
  const auto data = match_layers(ctx.cfg, "eval.layer", read_cache(eval_cache(ctx)), model.dims().layers);
  const auto metrics = recon_metrics(model, data, mode);
  const auto path = ctx.out_dir / "recon.csv";
  auto csv = open_output(path);
  write_recon_csv(csv, metrics);
  record_config(ctx, "eval");
  ctx.out << "mse=" << fmt(metrics.mse) << " ev=" << fmt(metrics.ev_defined ? metrics.ev : NAN)
          << " cs=" << fmt(metrics.cs) << "\nwrote " << path.string() << '\n';
  return kExitOk;
}

int cmd_coherence(Context& ctx) {
  const auto mode = eval_mode(ctx.cfg);
  const auto model = load_checkpoint(checkpoint_path(ctx));
  const auto data = match_layers(ctx.cfg, "eval.layer", read_cache(eval_cache(ctx)), model.dims().layers);
  const auto report = coherence_report(model, data, mode);
  const double width = ctx.cfg.real("eval.histogram_width");
  const std::size_t layers = model.dims().layers;
  {
    auto csv = open_output(ctx.out_dir / "coherence.csv");
    write_coherence_csv(csv, report);
  }
  {
    auto csv = open_output(ctx.out_dir / "coherence_hist.csv");
    write_histogram_csv(csv, coherence_histogram(report.norm.cn, layers, width),
                        coherence_histogram(report.cf, layers, width));
  }
  record_config(ctx, "coherence");
  ctx.out << "mean_cn=" << fmt(defined_mean(report.norm.cn))
          << " mean_cf=" << fmt(defined_mean(report.cf)) << " defined_cf=" << defined_count(report.cf)
          << "/" << report.latents() << "\nwrote " << (ctx.out_dir / "coherence.csv").string()
          << " and coherence_hist.csv\n";
  return kExitOk;
}

int cmd_probe(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto mode = eval_mode(cfg);
  const auto model = load_checkpoint(checkpoint_path(ctx));
  const fs::path source = cfg.is_set("probe.cache") ? fs::path(cfg.str("probe.cache")) : eval_cache(ctx);
  const auto data = match_layers(cfg, "eval.layer", read_cache(source), model.dims().layers);
  if (!data.labels()) throw DataError(source.string() + " has no labels; generate with data.labels = true");
  const auto task = split_probe_task(data, cfg.real("probe.train_fraction"), cfg.str("probe.task"));
  const auto result = run_probe(model, task, mode);
  const auto path = ctx.out_dir / "probe.csv";
  auto csv = open_output(path);
  write_probe_header(csv);
  write_probe_row(csv, result);
  record_config(ctx, "probe");
  ctx.out << result.task << ": latent " << result.latent << ", F1 / W1 = " << std::fixed
          << std::setprecision(1) << 100.0 * result.f1 << " / " << 1000.0 * result.wasserstein
          << std::defaultfloat << "\nwrote " << path.string() << '\n';
  return kExitOk;
}

std::string cell_name(double p, double reduction) {
  std::ostringstream s;
  s << "p" << p << "_r" << reduction;
  return s.str();
}

int cmd_sweep(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const ModelChoice choice = model_choice(cfg);
  if (choice.sae || choice.variant == Variant::kDense) {
    throw ConfigError("model.variant: the sweep varies ranks, use tr or cp");
  }
  const TrainConfig tc = train_config(cfg);
  const auto train_data = std::make_shared<const ActivationBatch>(read_cache(data_cache(ctx)));
  const ActivationBatch eval = read_cache(eval_cache(ctx));
  std::optional<ProbeTask> task;
  if (eval.labels()) task = split_probe_task(eval, cfg.real("probe.train_fraction"), cfg.str("probe.task"));
  const WeightDims dims{train_data->dim(), cfg.count("model.d_sae"), train_data->layers()};
  const auto mode = eval_mode(cfg);
  const auto seed = static_cast<std::uint64_t>(cfg.integer("seed"));

  const auto table_path = ctx.out_dir / "sweep.csv";
  auto table = open_output(table_path);
  table << "p,reduction,variant,r1,r2,r3,param_count,mse,mean_f1,mean_cf\n";
  for (const double p : cfg.reals("sweep.p")) {
    for (const double reduction : cfg.reals("sweep.reductions")) {
      // Each cell depends only on the config and its own (p, reduction).
      const fs::path dir = ctx.out_dir / "sweep" / cell_name(p, reduction);
      fs::create_directories(dir);
      const auto arm = train_arm(dims, {choice.variant, p, reduction}, cfg.count("model.k"),
                                 train_data, tc, seed, cfg.count("train.epochs"));
      save_checkpoint(arm.model, dir / "model.fmxc");
      const auto metrics = evaluate_arm(arm.model, eval, mode, nullptr, task ? &*task : nullptr);
      {
        auto csv = open_output(dir / "recon.csv");
        write_recon_csv(csv, metrics.recon);
      }
      {
        auto csv = open_output(dir / "coherence.csv");
        write_coherence_csv(csv, metrics.coherence);
      }
      std::array<std::size_t, 3> ranks{};
      if (const auto* tr = std::get_if<TrFactors<double>>(&arm.model.encoder)) ranks = tr->ranks();
      if (const auto* cp = std::get_if<CpFactors<double>>(&arm.model.encoder)) ranks = {cp->rank(), 0, 0};
      std::ostringstream row;
      row << fmt(p) << ',' << fmt(reduction) << ',' << to_string(choice.variant) << ',' << ranks[0]
          << ',' << ranks[1] << ',' << ranks[2] << ',' << param_count(arm.model) << ','
          << fmt(metrics.recon.mse) << ',' << fmt(metrics.probe ? metrics.probe->f1 : NAN) << ','
          << fmt(metrics.mean_cf) << '\n';
      table << row.str();
      auto cell = open_output(dir / "cell.csv");
      cell << "p,reduction,variant,r1,r2,r3,param_count,mse,mean_f1,mean_cf\n" << row.str();
      ctx.out << cell_name(p, reduction) << ": " << row.str();
    }
  }
  record_config(ctx, "sweep");
  ctx.out << "wrote " << table_path.string() << '\n';
  return kExitOk;
}

// Offline transcript: one {"feature_id": n, "response": "..."} or
// {"feature_id": n, "status": 503} object per line. Missing ids get status 404.
std::unique_ptr<ChatClient> stub_client(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read judge stub " + path.string());
  auto replies = std::make_shared<std::map<std::uint32_t, ChatReply>>();
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object() || !rec.contains("feature_id")) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected a JSON object with feature_id");
    }
    ChatReply reply{rec.value("status", 200), rec.value("response", std::string()), ""};
    if (reply.status != 200) reply.error = rec.value("error", std::string("stub error"));
    (*replies)[rec["feature_id"].get<std::uint32_t>()] = reply;
  }
  return std::make_unique<StubChatClient>([replies](const std::string& user) {
    const std::string key = "****Feature ID****: ";
    const auto at = user.find(key);
    const auto id = static_cast<std::uint32_t>(std::stoul(user.substr(at + key.size())));
    const auto it = replies->find(id);
    return it == replies->end() ? ChatReply{404, "", "no stub reply"} : it->second;
  });
}

int cmd_judge(Context& ctx) {
  const auto& cfg = ctx.cfg;
  if (!cfg.is_set("judge.evidence")) throw ConfigError("judge.evidence must name an evidence JSONL file");
  std::ifstream in(cfg.str("judge.evidence"));
  if (!in) throw DataError("cannot read " + cfg.str("judge.evidence"));
  const auto evidence = read_evidence_jsonl(in);

  std::unique_ptr<ChatClient> client;
  if (cfg.is_set("judge.stub")) {
    client = stub_client(cfg.str("judge.stub"));
  } else {
    EndpointConfig ec;
    ec.base_url = cfg.str("judge.base_url");
    ec.path = cfg.str("judge.path");
    ec.model = cfg.str("judge.model");
    ec.auth_env = cfg.str("judge.auth_env");
    ec.temperature = cfg.real("judge.temperature");
    ec.timeout_s = static_cast<int>(cfg.count("judge.timeout_s"));
    client = make_http_client(ec);
  }
  JudgeRunConfig rc;
  rc.max_retries = static_cast<int>(cfg.count("judge.max_retries"));
  rc.backoff = std::chrono::milliseconds(cfg.count("judge.backoff_ms"));
  rc.requests_per_second = cfg.real("judge.rps");
  rc.in_flight = std::max<std::size_t>(1, cfg.count("judge.in_flight"));

  auto audit = open_output(ctx.out_dir / "judge_audit.ndjson");
  const auto run = judge_latents(evidence, *client, rc, &audit);
  {
    auto csv = open_output(ctx.out_dir / "judgements.csv");
    write_judgements_csv(csv, run);
  }
  record_config(ctx, "judge");
  ctx.out << "semantic=" << run.counts.semantic << " surface=" << run.counts.surface
          << " unlabeled=" << run.counts.unlabeled << " errored=" << run.counts.errored
          << "\nwrote " << (ctx.out_dir / "judgements.csv").string() << " and judge_audit.ndjson\n";
  return kExitOk;
}

int cmd_ranks(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const std::size_t d = cfg.is_set("ranks.d") ? cfg.count("ranks.d") : cfg.count("data.d");
  const std::size_t d_sae = cfg.is_set("ranks.d_sae") ? cfg.count("ranks.d_sae") : cfg.count("model.d_sae");
  const std::size_t layers = cfg.is_set("ranks.layers") ? cfg.count("ranks.layers") : cfg.count("data.layers");
  const std::size_t dense = 2 * d * d_sae * layers;
  const std::size_t budget = cfg.is_set("ranks.budget") ? cfg.count("ranks.budget") : dense;
  const auto& ratio_name = cfg.str("ranks.ratio");
  RankRatio ratio = RankRatio::kFitted;
  if (ratio_name == "printed") {
    ratio = RankRatio::kPrinted;
  } else if (ratio_name != "fitted") {
    throw ConfigError("ranks.ratio: expected fitted or printed, got \"" + ratio_name + "\"");
  }

  const auto within = select_tr_ranks(d, d_sae, layers, budget, ratio);
  const auto nearest = nearest_tr_ranks(d, d_sae, layers, budget, ratio);
  const std::size_t cp = select_cp_rank(d, d_sae, layers, budget);
  auto tuple = [](const std::array<std::size_t, 3>& r) {
    return std::to_string(r[0]) + "," + std::to_string(r[1]) + "," + std::to_string(r[2]);
  };
  ctx.out << "dims d=" << d << " d_sae=" << d_sae << " L=" << layers << " budget=" << budget
          << " (dense weights " << dense << ")\n"
          << "tr_ranks=(" << tuple(within) << ") weights=" << 2 * tr_tensor_count(d, d_sae, layers, within) << '\n'
          << "tr_ranks_nearest=(" << tuple(nearest)
          << ") weights=" << 2 * tr_tensor_count(d, d_sae, layers, nearest) << '\n';
  if (cfg.is_set("model.ranks")) {
    const auto given = parse_ranks(cfg, "model.ranks");
    ctx.out << "tr_ranks_given=(" << tuple(given)
            << ") weights=" << 2 * tr_tensor_count(d, d_sae, layers, given) << '\n';
  }
  ctx.out << "cp_rank=" << cp << " weights=" << 2 * cp * (d + d_sae + layers) << '\n';
  return kExitOk;
}

using Command = int (*)(Context&);

const std::map<std::string, std::pair<Command, const char*>>& commands() {
  static const std::map<std::string, std::pair<Command, const char*>> table{
      {"generate", {cmd_generate, "write a synthetic activation cache"}},
      {"train", {cmd_train, "train a crosscoder or fmxcoder and save a checkpoint"}},
      {"eval", {cmd_eval, "reconstruction metrics (MSE, EV, CS)"}},
      {"coherence", {cmd_coherence, "norm and functional coherence per latent"}},
      {"probe", {cmd_probe, "single-latent sparse probing on a labelled cache"}},
      {"sweep", {cmd_sweep, "masking probability x rank reduction grid"}},
      {"judge", {cmd_judge, "label latents with a chat-model judge"}},
      {"ranks", {cmd_ranks, "parameter-matched TR ranks and CP rank"}},
  };
  return table;
}

// "--key value" and "--key=value" pairs.
void apply_overrides(Config& cfg, const std::vector<std::string>& rest) {
  for (std::size_t n = 0; n < rest.size(); ++n) {
    const std::string& arg = rest[n];
    if (arg.rfind("--", 0) != 0) throw ConfigError("unexpected argument: " + arg);
    const auto eq = arg.find('=');
    if (eq != std::string::npos) {
      cfg.set(arg.substr(2, eq - 2), arg.substr(eq + 1));
      continue;
    }
    const std::string key = arg.substr(2);
    if (!Config::known(key)) throw ConfigError("unknown config key: " + key);
    if (n + 1 >= rest.size()) throw ConfigError("missing value for --" + key);
    cfg.set(key, rest[++n]);
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Crosscoders and factorized masked crosscoders over multi-layer activations", "fmx"};
  app.require_subcommand(1);
  std::string config_path;
  for (const auto& [name, entry] : commands()) {
    auto* sub = app.add_subcommand(name, entry.second);
    sub->add_option("--config", config_path, "flat key = value config file");
    sub->allow_extras();
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "fmx: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    Context ctx{Config(), {}, out};
    if (!config_path.empty()) ctx.cfg.load_file(config_path);
    apply_overrides(ctx.cfg, sub->remaining());
    ctx.cfg.integer("seed");  // validates even for commands that ignore it
    ctx.out_dir = ctx.cfg.str("out");
    if (sub->get_name() != "ranks") std::filesystem::create_directories(ctx.out_dir);
    return commands().at(sub->get_name()).first(ctx);
  } catch (const ConfigError& e) {
    err << "fmx " << sub->get_name() << ": config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const FormatError& e) {
    err << "fmx " << sub->get_name() << ": format error: " << e.what() << '\n';
    return kExitData;
  } catch (const DataError& e) {
    err << "fmx " << sub->get_name() << ": data error: " << e.what() << '\n';
    return kExitData;
  } catch (const DimensionError& e) {
    err << "fmx " << sub->get_name() << ": dimension error: " << e.what() << '\n';
    return kExitData;
  } catch (const IndexError& e) {
    err << "fmx " << sub->get_name() << ": index error: " << e.what() << '\n';
    return kExitData;
  } catch (const ParseError& e) {
    err << "fmx " << sub->get_name() << ": parse error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "fmx " << sub->get_name() << ": error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace fmx

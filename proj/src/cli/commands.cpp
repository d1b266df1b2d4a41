#include <cstdio>
#include <fstream>
#include <ostream>

#include "CLI11.hpp"
#include "quadscan/bench.hpp"
#include "quadscan/checkpoint.hpp"
#include "quadscan/cli.hpp"
#include "quadscan/eval.hpp"

namespace quadscan::cli {

namespace fs = std::filesystem;

namespace {

const char* const kModelKeys[] = {"modalities", "mfm_paths", "mfm_blocks", "dim", "depth", "heads"};
const std::vector<std::string> kKnownTags{"OE", "LI", "SA", "NM"};

fs::path require_path(const RunConfig& cfg, const std::string& key, const char* command) {
  if (!cfg.is_set(key)) throw ConfigError(std::string(command) + ": --" + key + " is required");
  return cfg.get(key);
}

fs::path require_dir(const RunConfig& cfg, const std::string& key, const char* command) {
  fs::path p = require_path(cfg, key, command);
  if (!fs::is_directory(p)) throw ConfigError(std::string(command) + ": " + key + " directory '" + p.string() + "' does not exist");
  return p;
}

void log_config(const RunConfig& cfg, const char* command, std::ostream& err) {
  err << "# quadscan " << command << " resolved config\n" << cfg.dump();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path.string() + ": cannot open for writing");
  f << text;
}

std::vector<synth::Sequence> load_split(const fs::path& data, const std::string& split, const char* command) {
  const fs::path manifest = data / (split + ".txt");
  if (!fs::exists(manifest)) throw ConfigError(std::string(command) + ": manifest '" + manifest.string() + "' not found");
  const auto names = synth::read_manifest(manifest);
  if (names.empty()) throw eval::DataError(std::string(command) + ": manifest '" + manifest.string() + "' lists no sequences");
  std::vector<synth::Sequence> seqs;
  seqs.reserve(names.size());
  for (const auto& n : names) seqs.push_back(synth::read_sequence(data / n));
  return seqs;
}

int cmd_gen(RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const fs::path dir = require_path(cfg, "out", "gen");
  const auto spec = synth::CorpusSpec::named_or_file(cfg.get("spec"));
  log_config(cfg, "gen", err);
  const auto m = synth::make_corpus(spec, cfg.get_u64("seed"), dir);
  out << "generated " << m.train.size() + m.test.size() << " sequences (" << m.train.size() << " train, "
      << m.test.size() << " test) in " << dir.string() << '\n';
  return 0;
}

int cmd_train(RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const fs::path data = require_dir(cfg, "data", "train");
  const fs::path dir = require_path(cfg, "out", "train");
  cfg.resolve_training();
  const auto mc = cfg.tracker_config();
  const auto tc = cfg.train_config();
  log_config(cfg, "train", err);
  const auto seqs = load_split(data, "train", "train");

  fs::create_directories(dir);
  write_text(dir / "run_config.txt", cfg.dump());
  tracker::TrackerModel model(mc, Rng::derive(cfg.get_u64("seed"), 0));
  const std::size_t steps = (tc.samples_per_epoch + tc.batch - 1) / tc.batch;
  double epoch_sum = 0;
  const auto report = tracker::train(model, seqs, tc, [&](const tracker::LossRecord& r) {
    epoch_sum += r.total;
    if (r.step + 1 == steps) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "epoch %zu/%zu lr %.3g mean loss %.5f\n", r.epoch + 1, tc.epochs, r.lr,
                    epoch_sum / static_cast<double>(steps));
      out << buf << std::flush;
      epoch_sum = 0;
    }
  });
  checkpoint::save(dir / "model.ckpt", model.params());
  std::ofstream csv(dir / "loss.csv", std::ios::binary);
  tracker::write_loss_csv(csv, report);
  out << "trained " << model.params().parameter_count() << " parameters on " << seqs.size() << " sequences; wrote "
      << (dir / "model.ckpt").string() << '\n';
  if (report.skipped_steps > 0) err << "warning: " << report.skipped_steps << " steps skipped on non-finite gradients\n";
  return 0;
}

int cmd_eval(RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const fs::path data = require_dir(cfg, "data", "eval");
  const fs::path model_dir = require_dir(cfg, "model", "eval");
  const fs::path dir = require_path(cfg, "out", "eval");

  RunConfig trained;
  trained.load_file(model_dir / "run_config.txt");
  for (const char* key : kModelKeys) {
    if (cfg.source(key) == "cli") {
      const auto want = std::string(key) == "modalities"
                            ? tracker::ModalitySet::parse(cfg.get(key)).to_string()
                            : (std::string(key) == "mfm_paths" ? mfm::PathSet::parse(cfg.get(key)).to_string() : cfg.get(key));
      const auto have = std::string(key) == "modalities"
                            ? tracker::ModalitySet::parse(trained.get(key)).to_string()
                            : (std::string(key) == "mfm_paths" ? mfm::PathSet::parse(trained.get(key)).to_string() : trained.get(key));
      if (want != have) {
        throw ConfigError("eval: " + std::string(key) + " '" + cfg.get(key) + "' does not match the trained model ('" +
                          trained.get(key) + "')");
      }
    }
    cfg.set(key, trained.get(key), trained.source(key));
  }
  const auto mc = cfg.tracker_config();
  log_config(cfg, "eval", err);
  const auto seqs = load_split(data, cfg.get("split"), "eval");

  tracker::TrackerModel model(mc, 0);
  checkpoint::load(model_dir / "model.ckpt", model.params());
  const auto preds = tracker::track_all(model, seqs);

  fs::create_directories(dir / "predictions");
  std::vector<eval::TrackResult> results;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    std::ofstream f(dir / "predictions" / (seqs[i].name + ".txt"), std::ios::binary);
    char buf[128];
    for (const auto& b : preds[i]) {
      std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f\n", b.x1, b.y1, b.w, b.h);
      f << buf;
    }
    results.push_back({seqs[i].name, preds[i], seqs[i].boxes, seqs[i].attributes});
  }
  const auto overall = eval::score(results);
  const auto breakdown = eval::attribute_breakdown(results, kKnownTags);
  {
    std::ofstream csv(dir / "curves.csv", std::ios::binary);
    eval::write_curves_csv(csv, overall);
    std::ofstream json(dir / "summary.json", std::ios::binary);
    eval::write_summary_json(json, overall, breakdown);
  }
  write_text(dir / "run_config.txt", cfg.dump());
  char buf[128];
  std::snprintf(buf, sizeof buf, "PR %.4f SR %.4f over %zu sequences\n", overall.pr, overall.sr, overall.sequences);
  out << buf;
  for (const auto& [tag, rep] : breakdown.by_tag) {
    std::snprintf(buf, sizeof buf, "  %-4s PR %.4f SR %.4f (%zu)\n", tag.c_str(), rep.pr, rep.sr, rep.sequences);
    out << buf;
  }
  for (const auto& tag : breakdown.unknown) err << "warning: unknown attribute tag '" << tag << "'\n";
  return 0;
}

int cmd_bench(RunConfig& cfg, std::ostream& out, std::ostream& err) {
  bench::FusionBenchConfig bc;
  bc.lengths = cfg.get_sizes("lengths");
  bc.modalities = cfg.get_size("bench_modalities");
  bc.heads = cfg.get_size("heads");
  bc.mfm.dim = cfg.get_size("dim");
  bc.mfm.paths = mfm::PathSet::parse(cfg.get("mfm_paths"));
  bc.seed = cfg.get_u64("seed");
  log_config(cfg, "bench-fusion", err);
  const auto rows = bench::run_fusion_bench(bc);
  if (cfg.is_set("out")) {
    std::ofstream f(cfg.get("out"), std::ios::binary);
    if (!f) throw std::runtime_error(cfg.get("out") + ": cannot open for writing");
    bench::write_csv(f, rows);
    out << "wrote " << rows.size() << " rows to " << cfg.get("out") << '\n';
  } else {
    bench::write_csv(out, rows);
  }
  return 0;
}

int cmd_scan_dump(RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const std::size_t nz = cfg.get_size("scan_template_tokens");
  const TokenGeometry geo{cfg.get_size("scan_modalities"), nz, 4 * nz};
  geo.validate_grid();
  log_config(cfg, "scan-dump", err);
  std::string text;
  for (auto s : kAllScales) {
    const auto order = make_order(s, geo);
    for (std::size_t i = 0; i < order.perm.size(); ++i) {
      if (i) text += ',';
      text += std::to_string(order.perm[i]);
    }
    text += '\n';
  }
  if (cfg.is_set("out")) {
    write_text(cfg.get("out"), text);
  } else {
    out << text;
  }
  return 0;
}

struct Binding {
  CLI::Option* option;
  std::string key;
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"quadscan: quad-modal tracking with multiscale scan fusion", "quadscan"};
  app.require_subcommand(1);
  app.fallthrough();

  std::map<std::string, std::string> raw;
  std::vector<Binding> bindings;
  std::string config_path;
  app.add_option("--config", config_path, "key = value config file; command-line flags override it");
  auto bind = [&](CLI::App* target, const std::string& key, const std::string& help) {
    std::string flag = "--" + key;
    for (auto& ch : flag) ch = ch == '_' ? '-' : ch;
    bindings.push_back({target->add_option(flag, raw[key], help), key});
  };
  auto key_help = [](const std::string& key) {
    for (const auto& k : known_keys()) {
      if (k.name == key) return k.help;
    }
    return std::string();
  };
  bind(&app, "seed", "master seed");
  bind(&app, "out", "output path");

  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
  bind(gen, "spec", "corpus spec name or file");

  auto* train = app.add_subcommand("train", "train a tracker on a corpus");
  auto* evalc = app.add_subcommand("eval", "track and score a manifest");
  for (auto* sub : {train, evalc}) {
    bind(sub, "data", "corpus directory");
    bind(sub, "modalities", "enabled streams, e.g. rgb,t,e,l");
    bind(sub, "mfm_paths", "scan paths, e.g. forward,backward");
  }
  for (const char* key : {"mfm_blocks", "dim", "depth", "heads", "preset", "epochs", "batch", "lr", "weight_decay",
                          "decay_epoch", "samples_per_epoch", "clip_norm"}) {
    bind(train, key, key_help(key));
  }
  bind(evalc, "model", "training run directory");
  bind(evalc, "split", "train or test");

  auto* benchc = app.add_subcommand("bench-fusion", "fusion cost benchmark");
  for (const char* key : {"lengths", "bench_modalities", "dim", "heads", "mfm_paths"}) bind(benchc, key, key_help(key));
  auto* dump = app.add_subcommand("scan-dump", "print the four scan orders");
  for (const char* key : {"scan_modalities", "scan_template_tokens"}) bind(dump, key, key_help(key));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& b : bindings) {
      if (b.option->count() > 0) cfg.set(b.key, raw[b.key], "cli");
    }
    if (gen->parsed()) return cmd_gen(cfg, out, err);
    if (train->parsed()) return cmd_train(cfg, out, err);
    if (evalc->parsed()) return cmd_eval(cfg, out, err);
    if (benchc->parsed()) return cmd_bench(cfg, out, err);
    if (dump->parsed()) return cmd_scan_dump(cfg, out, err);
    return 2;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const eval::DataError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace quadscan::cli

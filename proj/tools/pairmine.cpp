// pairmine: command-line driver for the mining pipeline.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pairmine/config.hpp"
#include "pairmine/error.hpp"
#include "pairmine/pipeline.hpp"
#include "pairmine/synthetic.hpp"

namespace fs = std::filesystem;
using namespace pairmine;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kArtifact = 3, kNumeric = 4 };

struct GlobalFlags {
  std::string config;
  std::string workdir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  bool quiet = false;
};

PipelineConfig load_config(const GlobalFlags& g) {
  if (g.config.empty()) throw ConfigError("--config is required");
  FlatConfig flat = FlatConfig::load(g.config);
  for (const std::string& o : g.overrides) flat.apply_override(o);
  if (g.seed) flat.set("rng_seed", std::to_string(*g.seed));
  if (!g.workdir.empty()) flat.set("workdir", fs::absolute(g.workdir).string());
  return PipelineConfig::from_flat(flat);
}

void print_artifact(const StageArtifact& a) {
  const StageCounters& c = a.counters;
  std::cout << a.stage << ": in=" << c.records_in << " out=" << c.records_out
            << " filtered=" << c.filtered << " degenerate=" << c.degenerate << "\n";
}

struct SynthFlags {
  std::string preset = "separable";
  std::string out;
  std::optional<std::size_t> num_pairs, distractors, seed_pairs, vocab, input_len, output_len, days;
  std::optional<double> signal, distractor_overlap;
  std::uint64_t seed = 0;
};

int run_synth(const SynthFlags& f) {
  SyntheticSpec spec = preset(f.preset);
  if (f.num_pairs) spec.num_pairs = *f.num_pairs;
  if (f.distractors) spec.distractor_count = *f.distractors;
  if (f.seed_pairs) spec.seed_pairs = *f.seed_pairs;
  if (f.vocab) spec.vocab_size = *f.vocab;
  if (f.input_len) spec.input_len = *f.input_len;
  if (f.output_len) spec.output_len = *f.output_len;
  if (f.days) spec.num_days = *f.days;
  if (f.signal) spec.signal_overlap = *f.signal;
  if (f.distractor_overlap) spec.distractor_overlap = *f.distractor_overlap;
  spec.rng_seed = f.seed;
  const SyntheticData data = generate(spec);
  write_synthetic(f.out, data);
  std::cout << "wrote " << data.inputs.size() << " inputs, " << data.outputs.size() << " outputs, "
            << data.seed.size() << " seed pairs to " << f.out << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pairmine: mine (input, output) pairs from unpaired corpora"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--config", g.config, "Pipeline config file (key = value)");
  app.add_option("--workdir", g.workdir, "Work directory for stage artifacts");
  app.add_option("--seed", g.seed, "Master RNG seed (overrides rng_seed)");
  app.add_option("--stage-override", g.overrides, "Config override key=value (repeatable)");
  app.add_flag("-q,--quiet", g.quiet, "Only print stage counters");

  struct StageCmd {
    const char* name;
    const char* help;
  };
  const std::vector<StageCmd> stages = {
      {"ingest", "Read corpora and seed set, decompose outputs"},
      {"train-biencoder", "Train the biencoder and prefilter on the seed set"},
      {"embed", "Embed both corpora and apply the prefilter"},
      {"index", "Build per-shard vector indexes"},
      {"mine", "Score candidate pairs by kNN margin"},
      {"train-cross", "Train the crossencoder re-ranker"},
      {"filter", "Re-rank candidates and keep the top final_top_n"},
      {"export", "Write the mined dataset as JSONL"},
      {"evaluate", "Score rankings against a gold file"},
      {"run-all", "Run every stage in order"},
  };
  for (const StageCmd& s : stages) app.add_subcommand(s.name, s.help);

  SynthFlags sf;
  CLI::App* synth = app.add_subcommand("synth", "Generate synthetic corpora with planted pairs");
  synth->add_option("--preset", sf.preset, "separable or lexical_trap")->capture_default_str();
  synth->add_option("--out", sf.out, "Output directory")->required();
  synth->add_option("--num-pairs", sf.num_pairs, "Planted pairs in the corpora");
  synth->add_option("--distractors", sf.distractors, "Distractor outputs");
  synth->add_option("--seed-pairs", sf.seed_pairs, "Held-out planted pairs written as the seed set");
  synth->add_option("--vocab", sf.vocab, "Vocabulary size");
  synth->add_option("--input-len", sf.input_len, "Tokens per input");
  synth->add_option("--output-len", sf.output_len, "Tokens per output");
  synth->add_option("--days", sf.days, "Spread records over this many dates");
  synth->add_option("--signal-overlap", sf.signal, "Fraction of gold output tokens copied");
  synth->add_option("--distractor-overlap", sf.distractor_overlap, "Fraction of distractor tokens copied");
  synth->add_option("--rng-seed", sf.seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (synth->parsed()) return run_synth(sf);
    const PipelineConfig cfg = load_config(g);
    const Logger log = g.quiet ? Logger{} : Logger{[](std::string_view m) { std::cerr << m << "\n"; }};
    for (const StageCmd& s : stages) {
      if (!app.got_subcommand(s.name)) continue;
      if (std::string_view(s.name) == "run-all") {
        for (const StageArtifact& a : run_all(cfg, log)) print_artifact(a);
      } else {
        print_artifact(run_stage(cfg, parse_pipeline_stage(s.name), log));
      }
    }
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return kArtifact;
  } catch (const StaleArtifactError& e) {
    std::cerr << "stale artifact: " << e.what() << "\n";
    return kArtifact;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
}

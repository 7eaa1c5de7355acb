// ridgematch: synth, train, embed, match, eval, config.

#include <iostream>

#include "CLI11.hpp"
#include "ridgematch/cli.hpp"

namespace rm = ridgematch;
namespace cli = ridgematch::cli;

int main(int argc, char** argv) {
  CLI::App app{"Contactless-to-contact fingerprint matching: training, scoring and evaluation"};
  app.require_subcommand(1);

  cli::SynthOptions synth;
  std::string size = "32x32";
  std::optional<std::uint64_t> synth_seed;
  auto* s = app.add_subcommand("synth", "render a synthetic paired CL/CB corpus and its manifest");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--identities", synth.identities, "number of identities (>= 2)");
  s->add_option("--samples-per-modality", synth.samples_per_modality, "samples per identity and modality");
  s->add_option("--size", size, "image size HxW");
  s->add_option("--seed", synth_seed, "generator seed (default: $RIDGEMATCH_SEED or 0)");
  s->add_option("--test-identities", synth.test_identities, "number of trailing identities in the test split");

  cli::TrainOptions train;
  std::optional<std::filesystem::path> init;
  std::optional<std::filesystem::path> config;
  auto* t = app.add_subcommand("train", "train stage 1 (encoder) or stage 2 (fusion)");
  t->add_option("--stage", train.stage, "1 or 2")->required();
  t->add_option("--preset", train.preset, "desk, full or full-finetune");
  t->add_option("--config", config, "key=value config file");
  t->add_option("--manifest", train.manifest, "manifest; its train split is used")->required();
  t->add_option("--init", init, "stage-1 checkpoint (stage 2 only)");
  t->add_option("--out", train.out, "checkpoint to write")->required();
  t->add_option("--epochs", train.epochs, "override epochs");
  t->add_option("--seed", train.seed, "override seed");
  t->add_option("--set", train.sets, "override a config key (key=value, repeatable)");

  cli::EmbedOptions embed;
  auto* e = app.add_subcommand("embed", "write global embeddings for every manifest row");
  e->add_option("--checkpoint", embed.checkpoint)->required();
  e->add_option("--manifest", embed.manifest)->required();
  e->add_option("--out", embed.out, "CSV to write")->required();

  cli::MatchOptions match;
  auto* m = app.add_subcommand("match", "score every probe against every gallery sample");
  m->add_option("--checkpoint", match.checkpoint)->required();
  m->add_option("--probe", match.probe, "probe manifest")->required();
  m->add_option("--gallery", match.gallery, "gallery manifest")->required();
  m->add_option("--stage", match.stage, "1: global cosine, 2: fused score");
  m->add_option("--fusion-weight", match.fusion_weight, "weight of the fine score for stage 2");
  m->add_flag("--exclude-self", match.exclude_self, "skip pairs of the same image file");
  m->add_option("--out", match.out, "CSV to write")->required();

  cli::EvalOptions eval;
  std::optional<std::filesystem::path> scores, checkpoint, manifest, out;
  std::optional<std::string> protocol;
  auto* v = app.add_subcommand("eval", "verification and identification report");
  v->add_option("--scores", scores, "score CSV from match");
  v->add_option("--labels", eval.label_manifests, "manifests labelling the score file paths (repeatable)");
  v->add_option("--checkpoint", checkpoint);
  v->add_option("--manifest", manifest, "manifest; its test split is evaluated");
  v->add_option("--protocol", protocol, "cl2cb or cl2cl");
  v->add_option("--stage", eval.stage, "1 or 2");
  v->add_option("--fusion-weight", eval.fusion_weight);
  v->add_option("--far", eval.fars, "target FAR (repeatable; default 0.1 and 0.01)");
  v->add_option("--max-rank", eval.max_rank, "CMC depth");
  v->add_option("--out", out, "report file (default: stdout only)");

  int config_stage = 1;
  std::string config_preset = "desk";
  auto* c = app.add_subcommand("config", "print a preset as a documented config file");
  c->add_option("--stage", config_stage, "1 or 2");
  c->add_option("--preset", config_preset, "desk, full or full-finetune");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (s->parsed()) {
      std::tie(synth.height, synth.width) = cli::parse_size(size);
      synth.seed = synth_seed ? *synth_seed : cli::default_seed();
      const auto samples = cli::cmd_synth(synth);
      std::cout << "wrote " << samples.size() << " images and " << (synth.out / "manifest.csv").string() << "\n";
    } else if (t->parsed()) {
      train.init = init;
      train.config = config;
      cli::cmd_train(train, std::cout);
    } else if (e->parsed()) {
      cli::cmd_embed(embed);
    } else if (m->parsed()) {
      cli::cmd_match(match);
    } else if (v->parsed()) {
      eval.scores = scores;
      eval.checkpoint = checkpoint;
      eval.manifest = manifest;
      eval.protocol = protocol;
      eval.out = out;
      std::string text;
      cli::cmd_eval(eval, &text);
      std::cout << text;
    } else if (c->parsed()) {
      rm::TrainConfig cfg = cli::preset(config_preset, config_stage);
      cfg.seed = cli::default_seed(cfg.seed);
      std::cout << cli::dump_config(cfg);
    }
  } catch (const std::exception& err) {
    std::cerr << "ridgematch: " << err.what() << "\n";
    return cli::exit_code(err);
  }
  return 0;
}

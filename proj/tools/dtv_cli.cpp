// dtv: synthetic corpora, training, evaluation, indexing and the retrieval service.

#include "dtv/checkpoint.hpp"
#include "dtv/corpus.hpp"
#include "dtv/evaluate.hpp"
#include "dtv/http_server.hpp"
#include "dtv/service.hpp"
#include "dtv/synth.hpp"
#include "dtv/trainer.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>

namespace {

using namespace dtv;

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

void write_json(const std::string& path, const nlohmann::json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

struct ModelFlags {
  int layers = 2;
  int heads = 4;
  Index max_frames = 32;
  Index ffn_dim = 0;
  std::string fusion = "mean";
  bool fusion_projection = false;
  std::string similarity = "dot";
  std::string activation = "gelu";

  void attach(CLI::App* app) {
    app->add_option("--layers", layers, "Stacked attention blocks")->capture_default_str();
    app->add_option("--heads", heads, "Attention heads per block")->capture_default_str();
    app->add_option("--max-frames", max_frames, "Positional table length")->capture_default_str();
    app->add_option("--ffn-dim", ffn_dim, "Feed-forward width per block (0 = none)")->capture_default_str();
    app->add_option("--fusion", fusion, "Dialogue fusion: mean | last")->capture_default_str();
    app->add_flag("--fusion-projection", fusion_projection, "Learned projection after fusion");
    app->add_option("--similarity", similarity, "Pooling similarity: dot | cosine")->capture_default_str();
    app->add_option("--activation", activation, "Feed-forward activation: gelu | relu")->capture_default_str();
  }

  ModelConfig config(const CorpusManifest& manifest) const {
    ModelConfig c;
    c.dim = manifest.embedding_dim;
    c.mode = manifest.mode;
    c.layers = layers;
    c.heads = heads;
    c.max_frames = max_frames;
    c.ffn_dim = ffn_dim;
    c.fusion = parse_fusion(fusion);
    c.fusion_projection = fusion_projection;
    c.similarity = parse_similarity(similarity);
    c.activation = parse_activation(activation);
    return c;
  }
};

RetrievalServer* g_server = nullptr;

void handle_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dialogue-to-video retrieval engine"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a planted-correspondence synthetic corpus");
  SyntheticConfig synth_config;
  std::string synth_out, synth_mode = "cumulative_prefix";
  std::uint64_t synth_seed = 7;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();
  synth->add_option("--train", synth_config.train_videos)->capture_default_str();
  synth->add_option("--val", synth_config.validation_videos)->capture_default_str();
  synth->add_option("--test", synth_config.test_videos)->capture_default_str();
  synth->add_option("--frames", synth_config.frames)->capture_default_str();
  synth->add_option("--turns", synth_config.turns)->capture_default_str();
  synth->add_option("--dim", synth_config.dim)->capture_default_str();
  synth->add_option("--latent-dim", synth_config.latent_dim)->capture_default_str();
  synth->add_option("--noise", synth_config.noise_sigma, "Relative noise level")->capture_default_str();
  synth->add_option("--mode", synth_mode, "per_turn | cumulative_prefix")->capture_default_str();
  synth->add_option("--name", synth_config.name)->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "Contrastive training with early stopping");
  TrainConfig train_config;
  ModelFlags train_model;
  std::string train_corpus, train_out, train_log, train_loss = "log_softmax";
  std::uint64_t init_seed = 0;
  train_cmd->add_option("--corpus", train_corpus, "Corpus manifest")->required();
  train_cmd->add_option("--out", train_out, "Checkpoint path for the best epoch")->required();
  train_cmd->add_option("--lr", train_config.learning_rate)->capture_default_str();
  train_cmd->add_option("--epochs", train_config.epochs)->capture_default_str();
  train_cmd->add_option("--batch", train_config.batch_size)->capture_default_str();
  train_cmd->add_option("--max-grad-norm", train_config.max_grad_norm)->capture_default_str();
  train_cmd->add_option("--adam-eps", train_config.adamw_epsilon)->capture_default_str();
  train_cmd->add_option("--weight-decay", train_config.weight_decay)->capture_default_str();
  train_cmd->add_option("--patience", train_config.patience)->capture_default_str();
  train_cmd->add_option("--seed", train_config.seed, "Shuffling seed")->capture_default_str();
  train_cmd->add_option("--init-seed", init_seed, "Weight initialization seed")->capture_default_str();
  train_cmd->add_option("--rounds", train_config.rounds, "Use only the first r turns (0 = all)")->capture_default_str();
  train_cmd->add_option("--loss", train_loss, "log_softmax | probability")->capture_default_str();
  train_cmd->add_option("--log", train_log, "JSON-lines epoch log");
  train_model.attach(train_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "R@K / median / mean rank on one split");
  std::string eval_corpus, eval_checkpoint, eval_split = "test", eval_out;
  Index eval_rounds = 0;
  ModelFlags eval_model;
  std::uint64_t eval_init_seed = 0;
  eval_cmd->add_option("--corpus", eval_corpus, "Corpus manifest")->required();
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "Checkpoint (omit to score freshly initialized weights)");
  eval_cmd->add_option("--init-seed", eval_init_seed, "Initialization seed when no checkpoint is given")
      ->capture_default_str();
  eval_cmd->add_option("--split", eval_split)->capture_default_str();
  eval_cmd->add_option("--rounds", eval_rounds, "Use only the first r turns (0 = all)")->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "Report path (default stdout)");
  eval_model.attach(eval_cmd);

  // index
  auto* index_cmd = app.add_subcommand("index", "Precompute temporal frame representations");
  std::string index_corpus, index_checkpoint, index_split = "test", index_out;
  index_cmd->add_option("--corpus", index_corpus, "Corpus manifest")->required();
  index_cmd->add_option("--checkpoint", index_checkpoint)->required();
  index_cmd->add_option("--split", index_split)->capture_default_str();
  index_cmd->add_option("--out", index_out, "Index file")->required();

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Interactive HTTP retrieval service");
  std::string serve_checkpoint = env_or("DTV_CHECKPOINT", ""), serve_index = env_or("DTV_INDEX", "");
  std::string serve_embed_url = env_or("DTV_EMBED_PROVIDER_URL", ""), serve_host = "0.0.0.0", serve_sessions;
  int serve_port = std::atoi(env_or("DTV_PORT", "8080").c_str());
  bool serve_stub = false;
  EngineOptions engine_options;
  serve_cmd->add_option("--checkpoint", serve_checkpoint, "Checkpoint (env DTV_CHECKPOINT)");
  serve_cmd->add_option("--index", serve_index, "Index file (env DTV_INDEX)");
  serve_cmd->add_option("--embed-url", serve_embed_url, "Embedding server base URL (env DTV_EMBED_PROVIDER_URL)");
  serve_cmd->add_flag("--stub-embeddings", serve_stub, "Embed text turns with the deterministic hashing stub");
  serve_cmd->add_option("--host", serve_host)->capture_default_str();
  serve_cmd->add_option("--port", serve_port, "Port (env DTV_PORT)")->capture_default_str();
  serve_cmd->add_option("--max-turns", engine_options.max_turns)->capture_default_str();
  serve_cmd->add_option("--sessions", serve_sessions, "Session snapshot file, loaded at start and saved on exit");

  // export-report
  auto* report_cmd = app.add_subcommand("export-report", "Full metric suite plus the dialogue-rounds curve");
  std::string report_corpus, report_checkpoint, report_split = "validation", report_out;
  Index report_max_rounds = 0;
  report_cmd->add_option("--corpus", report_corpus, "Corpus manifest")->required();
  report_cmd->add_option("--checkpoint", report_checkpoint)->required();
  report_cmd->add_option("--split", report_split)->capture_default_str();
  report_cmd->add_option("--max-rounds", report_max_rounds, "Curve length (0 = every turn)")->capture_default_str();
  report_cmd->add_option("--out", report_out, "Report path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      synth_config.mode = parse_dialogue_mode(synth_mode);
      const SyntheticCorpus corpus = generate_synthetic(synth_config, synth_seed);
      for (const auto& w : corpus.warnings) std::cerr << "warning: " << w << '\n';
      const CorpusManifest m = write_synthetic(corpus, synth_config, synth_seed, synth_out);
      std::cout << "wrote " << m.name << " to " << synth_out << " (" << corpus.train.videos.size() << "/"
                << corpus.validation.videos.size() << "/" << corpus.test.videos.size() << " videos)\n";
    } else if (train_cmd->parsed()) {
      const CorpusManifest manifest = load_manifest(train_corpus);
      const Split train_split = load_split(manifest, kTrain);
      const Split val_split = load_split(manifest, kValidation);
      train_config.loss_form = parse_loss_form(train_loss);
      if (!train_log.empty()) train_config.log_path = train_log;
      const ModelParams init = ModelParams::initialize(train_model.config(manifest), init_seed);
      std::cerr << "training " << init.parameter_count() << " parameters on " << train_split.queries.size()
                << " pairs\n";
      const TrainResult result = train(train_config, train_split, val_split, init);
      for (const auto& r : result.log) std::cout << to_json_line(r) << '\n';
      save_checkpoint(train_out, result.best);
      std::cerr << "best epoch " << result.best_epoch << " saved to " << train_out << '\n';
      if (result.diverged) {
        std::cerr << "training diverged: " << result.diagnostic << '\n';
        return 2;
      }
    } else if (eval_cmd->parsed()) {
      const CorpusManifest manifest = load_manifest(eval_corpus);
      const ModelParams params = eval_checkpoint.empty()
                                     ? ModelParams::initialize(eval_model.config(manifest), eval_init_seed)
                                     : load_checkpoint(eval_checkpoint);
      const MetricSummary m = evaluate(params, load_split(manifest, eval_split), eval_rounds);
      write_json(eval_out, evaluation_report(m));
    } else if (index_cmd->parsed()) {
      const CorpusManifest manifest = load_manifest(index_corpus);
      const ModelParams params = load_checkpoint(index_checkpoint);
      const Split split = load_split(manifest, index_split);
      write_index(index_out, build_index(params, split.videos));
      std::cout << "indexed " << split.videos.size() << " videos to " << index_out << '\n';
    } else if (serve_cmd->parsed()) {
      if (serve_checkpoint.empty() || serve_index.empty()) {
        throw std::invalid_argument("serve needs --checkpoint and --index (or DTV_CHECKPOINT / DTV_INDEX)");
      }
      ModelParams params = load_checkpoint(serve_checkpoint);
      std::shared_ptr<EmbeddingProvider> provider;
      if (serve_stub) {
        provider = std::make_shared<HashingEmbeddingProvider>(params.config().dim);
      } else if (!serve_embed_url.empty()) {
        provider = std::make_shared<HttpEmbeddingProvider>(serve_embed_url, params.config().dim);
      }
      auto engine = std::make_shared<RetrievalEngine>(std::move(params), read_index(serve_index), provider,
                                                      engine_options);
      if (!serve_sessions.empty() && std::filesystem::exists(serve_sessions)) engine->load_sessions(serve_sessions);
      RetrievalServer server(engine);
      const int port = server.bind(serve_host, serve_port);
      if (port < 0) throw std::runtime_error("cannot bind " + serve_host + ":" + std::to_string(serve_port));
      g_server = &server;
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      std::cerr << "serving " << engine->index().ids.size() << " videos on " << serve_host << ":" << port << '\n';
      server.serve();
      g_server = nullptr;
      if (!serve_sessions.empty()) engine->save_sessions(serve_sessions);
    } else if (report_cmd->parsed()) {
      const CorpusManifest manifest = load_manifest(report_corpus);
      const ModelParams params = load_checkpoint(report_checkpoint);
      const Split split = load_split(manifest, report_split);
      Index max_rounds = report_max_rounds;
      if (max_rounds == 0) {
        max_rounds = split.queries.empty() ? 0 : split.queries.front().turns.rows();
        for (const auto& q : split.queries) max_rounds = std::min(max_rounds, q.turns.rows());
      }
      const auto curve = rounds_ablation(params, split, default_rounds(max_rounds));
      write_json(report_out, evaluation_report(evaluate(params, split), &curve));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

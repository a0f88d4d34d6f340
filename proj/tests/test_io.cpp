#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <string>

#include "gnpe/config.hpp"
#include "gnpe/io.hpp"

using namespace gnpe;
namespace fs = std::filesystem;

namespace {

const char* kSampleConfig = R"(# sample run configuration
[sim]
n_agents = 6    # inline comment
n_topics = 2
n_steps = 4
seed = 3

[train]
n_sims = 12
batch_size = 4
lr = 5e-4
val_fraction = 0.25
patience_epochs = 5
max_epochs = 10
seed = 9

[arch]
q = 3
hidden = 8
readout = [6, 5, 4]
flow_blocks = 3
flow_hidden = 10

[prior]
rho = [0.0, 5.0]
eps = [0.0, 1.0]
lam = [0.0, 1.0]
p_init = [0.0, 1.0]
)";

fs::path temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("gnpe_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::uint8_t> slurp(const fs::path& p) { return detail::read_bytes(p); }

RunConfig sample_config() { return config_from_toml(parse_toml(kSampleConfig)); }

}  // namespace

TEST_CASE("toml subset parser handles the config layout", "[io]") {
  const auto kv = parse_toml(kSampleConfig);
  REQUIRE(kv.at("sim.n_agents").int_v == 6);
  REQUIRE(kv.at("train.lr").as_number() == 5e-4);
  REQUIRE(kv.at("arch.readout").array_v == std::vector<double>{6, 5, 4});
  REQUIRE(kv.at("prior.rho").array_v == std::vector<double>{0.0, 5.0});
}

TEST_CASE("toml parser error paths", "[io]") {
  REQUIRE_THROWS_AS(parse_toml("key"), ConfigError);
  REQUIRE_THROWS_AS(parse_toml("[sec\nk = 1"), ConfigError);
  REQUIRE_THROWS_AS(parse_toml("k = 1\nk = 2"), ConfigError);
  REQUIRE_THROWS_AS(parse_toml("k = abc"), ConfigError);
  REQUIRE_THROWS_AS(parse_toml("k = [1, 2"), ConfigError);
}

TEST_CASE("run config: values, defaults, and unknown keys", "[io]") {
  const RunConfig cfg = sample_config();
  REQUIRE(cfg.sim.n_agents == 6);
  REQUIRE(cfg.train.batch_size == 4);
  REQUIRE(cfg.arch_readout1 == 6);
  REQUIRE(cfg.arch_embed_dim == 4);
  REQUIRE(cfg.prior.hi[0] == 5.0);

  // defaults fill anything missing
  const RunConfig defaults = config_from_toml(parse_toml("[sim]\nn_agents = 4\n"));
  REQUIRE(defaults.sim.n_agents == 4);
  REQUIRE(defaults.arch_hidden == 64);
  REQUIRE(defaults.train.lr == 5e-4);

  REQUIRE_THROWS_AS(config_from_toml(parse_toml("[sim]\nn_agent = 4\n")), ConfigError);
  REQUIRE_THROWS_AS(config_from_toml(parse_toml("[arch]\nreadout = [1, 2]\n")),
                    ConfigError);
}

TEST_CASE("data hash covers sim and prior but not training", "[io]") {
  const RunConfig a = sample_config();
  RunConfig b = a;
  REQUIRE(a.data_hash() == b.data_hash());
  b.train.seed = 999;
  b.train.lr = 1.0;
  REQUIRE(a.data_hash() == b.data_hash());
  b.sim.n_agents = 7;
  REQUIRE(a.data_hash() != b.data_hash());
  RunConfig c = a;
  c.prior.hi[0] = 4.0;
  REQUIRE(a.data_hash() != c.data_hash());
}

TEST_CASE("corpus store round trip is byte identical", "[io]") {
  const RunConfig cfg = sample_config();
  const Corpus corpus = generate_corpus(cfg.sim, cfg.prior, 5, 42, 2);
  const fs::path dir1 = temp_dir("corpus1");
  const fs::path dir2 = temp_dir("corpus2");
  write_corpus(dir1, corpus, cfg.data_hash());
  const Corpus loaded = read_corpus(dir1, cfg.data_hash());
  write_corpus(dir2, loaded, cfg.data_hash());
  for (const char* name : {"manifest.json", "theta.f64", "z.i8", "w.f32"})
    REQUIRE(slurp(dir1 / name) == slurp(dir2 / name));

  REQUIRE(loaded.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (int d = 0; d < ModelParams::kDim; ++d)
      REQUIRE(loaded.thetas[i][d] == corpus.thetas[i][d]);
    REQUIRE(loaded.traces[i].z == corpus.traces[i].z);
    // weights come back f32-quantized
    for (std::size_t k = 0; k < corpus.traces[i].w.size(); ++k)
      REQUIRE(loaded.traces[i].w[k] ==
              static_cast<double>(static_cast<float>(corpus.traces[i].w[k])));
  }
}

TEST_CASE("corpus store validation failures", "[io]") {
  const RunConfig cfg = sample_config();
  const Corpus corpus = generate_corpus(cfg.sim, cfg.prior, 3, 1, 1);
  const fs::path dir = temp_dir("corpus_bad");
  write_corpus(dir, corpus, cfg.data_hash());

  REQUIRE_THROWS_AS(read_corpus(dir, cfg.data_hash() + 1), UsageError);

  // truncate z.i8 -> length mismatch
  const auto z = slurp(dir / "z.i8");
  detail::write_bytes(dir / "z.i8", z.data(), z.size() - 1);
  REQUIRE_THROWS_AS(read_corpus(dir), IoError);

  REQUIRE_THROWS_AS(read_corpus(temp_dir("corpus_missing")), IoError);
}

TEST_CASE("checkpoint round trip reproduces densities bitwise", "[io]") {
  SimConfig sim;
  sim.n_agents = 6;
  sim.n_topics = 2;
  sim.n_steps = 4;
  EmbedderArch ea;
  ea.q = 3;
  ea.hidden = 8;
  ea.readout1 = 6;
  ea.readout2 = 5;
  ea.embed_dim = 4;
  FlowArch fa;
  fa.context_dim = 4;
  fa.n_blocks = 3;
  fa.hidden = 10;
  auto model = PosteriorModel<float>::create(sim, PriorBox{}, ea, fa, 99);

  CheckpointMeta meta;
  meta.train_seed = 9;
  meta.best_epoch = 4;
  meta.best_val_loss = -1.25;
  meta.config_hash = 0xabcdef;
  const fs::path dir = temp_dir("ckpt");
  save_checkpoint(dir / "m.ckpt", model, meta);
  const LoadedCheckpoint loaded = load_checkpoint(dir / "m.ckpt");
  REQUIRE(loaded.meta.best_epoch == 4);
  REQUIRE(loaded.meta.train_seed == 9);
  REQUIRE(loaded.meta.config_hash == 0xabcdef);
  save_checkpoint(dir / "m2.ckpt", loaded.model, loaded.meta);
  REQUIRE(slurp(dir / "m.ckpt") == slurp(dir / "m2.ckpt"));

  // density evaluation agrees bit for bit at 32-bit parameters
  ModelParams t;
  t.rho = 1.2;
  t.eps = 0.4;
  t.lam = 0.6;
  t.p_init = 0.3;
  SimConfig seeded = sim;
  seeded.seed = 5;
  const GraphTrace obs = simulate(t, seeded);
  const Tensor<float> ctx1 = embed_trace(model.embedder, model.store, obs);
  const Tensor<float> ctx2 = embed_trace(loaded.model.embedder, loaded.model.store, obs);
  for (std::size_t i = 0; i < ctx1.size(); ++i) REQUIRE(ctx1.data[i] == ctx2.data[i]);
  const double lp1 = model.flow.log_prob_raw(model.store, theta_vec(t), ctx1);
  const double lp2 = loaded.model.flow.log_prob_raw(loaded.model.store, theta_vec(t), ctx2);
  REQUIRE(lp1 == lp2);
}

TEST_CASE("checkpoint rejects corrupted headers", "[io]") {
  const fs::path dir = temp_dir("ckpt_bad");
  detail::write_bytes(dir / "junk.ckpt", "nonsense", 8);
  REQUIRE_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), IoError);
}

TEST_CASE("samples file layout", "[io]") {
  const fs::path dir = temp_dir("samples");
  ModelParams a, b;
  a.rho = 1.5;
  b.rho = 3.5;
  b.p_init = 0.9;
  write_samples(dir / "s.f64", {a, b});
  const auto vals = detail::read_array<double>(dir / "s.f64");
  REQUIRE(vals.size() == 8);
  REQUIRE(vals[0] == 1.5);
  REQUIRE(vals[4] == 3.5);
  REQUIRE(vals[7] == 0.9);
}

TEST_CASE("json writers produce stable shapes", "[io]") {
  ModelParams truth;
  const CornerData cd = corner_data({truth, truth}, 5, PriorBox{}, &truth);
  const Json j = corner_to_json(cd);
  REQUIRE(j.at("bins") == 5);
  REQUIRE(j.at("hist1d").size() == 4);
  REQUIRE(j.at("hist2d").size() == 6);
  REQUIRE(j.at("truth").size() == 4);

  TrainReport r;
  r.n_train = 9;
  r.n_val = 1;
  r.stopping_reason = "max_epochs";
  const Json rj = train_report_to_json(r);
  REQUIRE(rj.contains("timing"));
  REQUIRE(rj.at("n_train") == 9);
}

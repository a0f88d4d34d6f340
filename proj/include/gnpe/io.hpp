#pragma once

// On-disk formats: the corpus directory (manifest.json + flat little-endian
// arrays), the checkpoint (JSON header + named f32 parameter blocks), the
// raw posterior-sample file, and the JSON report writers. JSON uses
// ordered_json so key order, and therefore bytes, are stable.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gnpe/abm.hpp"
#include "gnpe/diagnostics.hpp"
#include "gnpe/errors.hpp"
#include "gnpe/training.hpp"

namespace gnpe {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

using Json = nlohmann::ordered_json;

namespace detail {

inline void write_bytes(const std::filesystem::path& path, const void* data,
                        std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(size));
  if (size > 0) in.read(reinterpret_cast<char*>(buf.data()), size);
  if (!in) throw IoError("read failed: " + path.string());
  return buf;
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  const std::string text = j.dump(2) + "\n";
  write_bytes(path, text.data(), text.size());
}

inline Json read_json(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  Json j = Json::parse(bytes.begin(), bytes.end(), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw IoError("invalid JSON: " + path.string());
  return j;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Whole-file read into a typed little-endian array.
template <typename V>
std::vector<V> read_array(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  if (bytes.size() % sizeof(V) != 0)
    throw IoError("file length is not a multiple of the element size: " + path.string());
  std::vector<V> out(bytes.size() / sizeof(V));
  if (!out.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

}  // namespace detail

// ---- corpus directory -------------------------------------------------------
// manifest.json + theta.f64 (n x 4) + z.i8 (n x (T+1) x N x K, +-1) +
// w.f32 (n x (T+1) x N x N).

inline void write_corpus(const std::filesystem::path& dir, const Corpus& corpus,
                         std::uint64_t config_hash) {
  std::filesystem::create_directories(dir);
  const int n = static_cast<int>(corpus.size());
  const int snaps = corpus.sim.n_steps + 1;
  const std::size_t z_per = static_cast<std::size_t>(snaps) * corpus.sim.n_agents *
                            corpus.sim.n_topics;
  const std::size_t w_per = static_cast<std::size_t>(snaps) * corpus.sim.n_agents *
                            corpus.sim.n_agents;

  std::vector<double> theta(static_cast<std::size_t>(n) * ModelParams::kDim);
  std::vector<std::int8_t> z(static_cast<std::size_t>(n) * z_per);
  std::vector<float> w(static_cast<std::size_t>(n) * w_per);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < ModelParams::kDim; ++d)
      theta[static_cast<std::size_t>(i) * ModelParams::kDim + d] = corpus.thetas[i][d];
    const GraphTrace& tr = corpus.traces[i];
    std::memcpy(z.data() + static_cast<std::size_t>(i) * z_per, tr.z.data(), z_per);
    for (std::size_t k = 0; k < w_per; ++k)
      w[static_cast<std::size_t>(i) * w_per + k] = static_cast<float>(tr.w[k]);
  }
  detail::write_bytes(dir / "theta.f64", theta.data(), theta.size() * sizeof(double));
  detail::write_bytes(dir / "z.i8", z.data(), z.size());
  detail::write_bytes(dir / "w.f32", w.data(), w.size() * sizeof(float));

  Json m;
  m["schema_version"] = 1;
  m["n_sims"] = n;
  m["n_agents"] = corpus.sim.n_agents;
  m["n_topics"] = corpus.sim.n_topics;
  m["n_steps"] = corpus.sim.n_steps;
  m["seed"] = corpus.seed;
  m["config_hash"] = detail::hash_hex(config_hash);
  m["prior"] = {{"lo", std::vector<double>(corpus.prior.lo, corpus.prior.lo + 4)},
                {"hi", std::vector<double>(corpus.prior.hi, corpus.prior.hi + 4)}};
  m["files"] = {
      {"theta", {{"dtype", "f64"}, {"shape", {n, ModelParams::kDim}}}},
      {"z",
       {{"dtype", "i8"},
        {"shape", {n, snaps, corpus.sim.n_agents, corpus.sim.n_topics}}}},
      {"w",
       {{"dtype", "f32"}, {"shape", {n, snaps, corpus.sim.n_agents, corpus.sim.n_agents}}}},
  };
  detail::write_json(dir / "manifest.json", m);
}

// Reads and validates a corpus directory. If expected_hash is nonzero, a
// mismatching manifest hash is a UsageError (the config chain is broken).
inline Corpus read_corpus(const std::filesystem::path& dir,
                          std::uint64_t expected_hash = 0) {
  const Json m = detail::read_json(dir / "manifest.json");
  Corpus corpus;
  try {
    const int n = m.at("n_sims").get<int>();
    corpus.sim.n_agents = m.at("n_agents").get<int>();
    corpus.sim.n_topics = m.at("n_topics").get<int>();
    corpus.sim.n_steps = m.at("n_steps").get<int>();
    corpus.seed = m.at("seed").get<std::uint64_t>();
    const auto lo = m.at("prior").at("lo").get<std::vector<double>>();
    const auto hi = m.at("prior").at("hi").get<std::vector<double>>();
    if (lo.size() != ModelParams::kDim || hi.size() != ModelParams::kDim)
      throw IoError("corpus manifest: bad prior bounds");
    for (int d = 0; d < ModelParams::kDim; ++d) {
      corpus.prior.lo[d] = lo[d];
      corpus.prior.hi[d] = hi[d];
    }
    if (expected_hash != 0 &&
        m.at("config_hash").get<std::string>() != detail::hash_hex(expected_hash))
      throw UsageError("corpus config hash does not match the active config");

    corpus.sim.validate();
    const int snaps = corpus.sim.n_steps + 1;
    const std::size_t z_per = static_cast<std::size_t>(snaps) * corpus.sim.n_agents *
                              corpus.sim.n_topics;
    const std::size_t w_per = static_cast<std::size_t>(snaps) * corpus.sim.n_agents *
                              corpus.sim.n_agents;

    const auto theta = detail::read_array<double>(dir / "theta.f64");
    const auto z = detail::read_array<std::int8_t>(dir / "z.i8");
    const auto w = detail::read_array<float>(dir / "w.f32");
    if (theta.size() != static_cast<std::size_t>(n) * ModelParams::kDim)
      throw IoError("corpus: theta.f64 length does not match manifest shape");
    if (z.size() != static_cast<std::size_t>(n) * z_per)
      throw IoError("corpus: z.i8 length does not match manifest shape");
    if (w.size() != static_cast<std::size_t>(n) * w_per)
      throw IoError("corpus: w.f32 length does not match manifest shape");

    corpus.thetas.resize(n);
    corpus.traces.resize(n);
    for (int i = 0; i < n; ++i) {
      for (int d = 0; d < ModelParams::kDim; ++d)
        corpus.thetas[i][d] = theta[static_cast<std::size_t>(i) * ModelParams::kDim + d];
      GraphTrace& tr = corpus.traces[i];
      tr.allocate(corpus.sim);
      std::memcpy(tr.z.data(), z.data() + static_cast<std::size_t>(i) * z_per, z_per);
      for (std::size_t k = 0; k < w_per; ++k)
        tr.w[k] = static_cast<double>(w[static_cast<std::size_t>(i) * w_per + k]);
      tr.validate();
    }
  } catch (const Json::exception& e) {
    throw IoError("corpus manifest: " + std::string(e.what()));
  }
  return corpus;
}

// ---- checkpoint --------------------------------------------------------------
// magic + u64 header length + header JSON + concatenated f32 blocks in
// header order. Parameters are stored at 32-bit; load(save(m)) is exact for
// the float lane.

inline constexpr char kCheckpointMagic[8] = {'G', 'N', 'P', 'E', 'C', 'K', 'P', '1'};

struct CheckpointMeta {
  std::uint64_t train_seed = 0;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  std::uint64_t config_hash = 0;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const PosteriorModel<T>& model,
                     const CheckpointMeta& meta) {
  const ParamStore<float> store32 = model.store.template cast<float>();
  Json h;
  h["schema_version"] = 1;
  h["sim"] = {{"n_agents", model.fingerprint.n_agents},
              {"n_topics", model.fingerprint.n_topics},
              {"n_steps", model.fingerprint.n_steps}};
  h["prior"] = {{"lo", model.flow.box.lo}, {"hi", model.flow.box.hi}};
  h["arch"] = {{"q", model.earch.q},
               {"hidden", model.earch.hidden},
               {"readout", {model.earch.readout1, model.earch.readout2, model.earch.embed_dim}},
               {"flow_blocks", model.farch.n_blocks},
               {"flow_hidden", model.farch.hidden},
               {"alpha_clamp", model.farch.alpha_clamp}};
  h["train"] = {{"seed", meta.train_seed},
                {"best_epoch", meta.best_epoch},
                {"best_val_loss", meta.best_val_loss},
                {"config_hash", detail::hash_hex(meta.config_hash)}};
  Json params = Json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < store32.size(); ++i) {
    const auto& t = store32[static_cast<ParamId>(i)];
    params.push_back({{"name", store32.name(static_cast<ParamId>(i))},
                      {"rows", t.rows},
                      {"cols", t.cols},
                      {"offset", offset}});
    offset += t.size();
  }
  h["params"] = params;

  const std::string header = h.dump();
  std::vector<std::uint8_t> blob;
  blob.reserve(sizeof(kCheckpointMagic) + 8 + header.size() + offset * sizeof(float));
  blob.insert(blob.end(), kCheckpointMagic, kCheckpointMagic + sizeof(kCheckpointMagic));
  const std::uint64_t hlen = header.size();
  const auto* hlen_bytes = reinterpret_cast<const std::uint8_t*>(&hlen);
  blob.insert(blob.end(), hlen_bytes, hlen_bytes + 8);
  blob.insert(blob.end(), header.begin(), header.end());
  for (std::size_t i = 0; i < store32.size(); ++i) {
    const auto& t = store32[static_cast<ParamId>(i)];
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(t.data.data());
    blob.insert(blob.end(), bytes, bytes + t.size() * sizeof(float));
  }
  detail::write_bytes(path, blob.data(), blob.size());
}

struct LoadedCheckpoint {
  PosteriorModel<float> model;
  CheckpointMeta meta;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto blob = detail::read_bytes(path);
  if (blob.size() < sizeof(kCheckpointMagic) + 8 ||
      std::memcmp(blob.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw IoError("not a checkpoint file: " + path.string());
  std::uint64_t hlen = 0;
  std::memcpy(&hlen, blob.data() + sizeof(kCheckpointMagic), 8);
  const std::size_t header_begin = sizeof(kCheckpointMagic) + 8;
  if (blob.size() < header_begin + hlen) throw IoError("truncated checkpoint header");
  Json h = Json::parse(blob.begin() + header_begin, blob.begin() + header_begin + hlen,
                       nullptr, /*allow_exceptions=*/false);
  if (h.is_discarded()) throw IoError("invalid checkpoint header JSON");

  LoadedCheckpoint out;
  try {
    SimConfig sim;
    sim.n_agents = h.at("sim").at("n_agents").get<int>();
    sim.n_topics = h.at("sim").at("n_topics").get<int>();
    sim.n_steps = h.at("sim").at("n_steps").get<int>();
    const auto lo = h.at("prior").at("lo").get<std::vector<double>>();
    const auto hi = h.at("prior").at("hi").get<std::vector<double>>();
    if (lo.size() != ModelParams::kDim || hi.size() != ModelParams::kDim)
      throw IoError("checkpoint: bad prior bounds");
    PriorBox prior;
    for (int d = 0; d < ModelParams::kDim; ++d) {
      prior.lo[d] = lo[d];
      prior.hi[d] = hi[d];
    }
    EmbedderArch earch;
    earch.n_agents = sim.n_agents;
    earch.n_topics = sim.n_topics;
    earch.q = h.at("arch").at("q").get<int>();
    earch.hidden = h.at("arch").at("hidden").get<int>();
    const auto readout = h.at("arch").at("readout").get<std::vector<int>>();
    if (readout.size() != 3) throw IoError("checkpoint: bad readout sizes");
    earch.readout1 = readout[0];
    earch.readout2 = readout[1];
    earch.embed_dim = readout[2];
    FlowArch farch;
    farch.dim = ModelParams::kDim;
    farch.context_dim = earch.embed_dim;
    farch.n_blocks = h.at("arch").at("flow_blocks").get<int>();
    farch.hidden = h.at("arch").at("flow_hidden").get<int>();
    farch.alpha_clamp = h.at("arch").at("alpha_clamp").get<double>();

    out.model = PosteriorModel<float>::create(sim, prior, earch, farch, /*init_seed=*/0);
    out.meta.train_seed = h.at("train").at("seed").get<std::uint64_t>();
    out.meta.best_epoch = h.at("train").at("best_epoch").get<int>();
    out.meta.best_val_loss = h.at("train").at("best_val_loss").get<double>();
    out.meta.config_hash =
        std::stoull(h.at("train").at("config_hash").get<std::string>(), nullptr, 16);

    const Json& params = h.at("params");
    if (params.size() != out.model.store.size())
      throw IoError("checkpoint: parameter count does not match architecture");
    const std::size_t data_begin = header_begin + hlen;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Json& p = params[i];
      Tensor<float>& t = out.model.store[static_cast<ParamId>(i)];
      if (p.at("name").get<std::string>() != out.model.store.name(static_cast<ParamId>(i)) ||
          p.at("rows").get<int>() != t.rows || p.at("cols").get<int>() != t.cols)
        throw IoError("checkpoint: parameter table mismatch at index " + std::to_string(i));
      const std::size_t offset = data_begin + p.at("offset").get<std::size_t>() * sizeof(float);
      if (offset + t.size() * sizeof(float) > blob.size())
        throw IoError("checkpoint: truncated parameter data");
      std::memcpy(t.data.data(), blob.data() + offset, t.size() * sizeof(float));
    }
  } catch (const Json::exception& e) {
    throw IoError("checkpoint header: " + std::string(e.what()));
  }
  return out;
}

// ---- samples / reports --------------------------------------------------------

inline void write_samples(const std::filesystem::path& path,
                          const std::vector<ModelParams>& thetas) {
  std::vector<double> flat;
  flat.reserve(thetas.size() * ModelParams::kDim);
  for (const auto& t : thetas)
    for (int d = 0; d < ModelParams::kDim; ++d) flat.push_back(t[d]);
  detail::write_bytes(path, flat.data(), flat.size() * sizeof(double));
}

inline Json corner_to_json(const CornerData& cd) {
  Json j;
  j["schema_version"] = 1;
  j["n_samples"] = cd.n_samples;
  j["bins"] = cd.bins;
  Json dims = Json::array();
  for (int d = 0; d < ModelParams::kDim; ++d) dims.push_back(ModelParams::dim_name(d));
  j["dims"] = dims;
  j["lo"] = cd.lo;
  j["hi"] = cd.hi;
  j["hist1d"] = cd.hist1d;
  Json pairs = Json::array();
  for (const auto& p : cd.hist2d)
    pairs.push_back({{"dim_x", p.dim_x}, {"dim_y", p.dim_y}, {"counts", p.counts}});
  j["hist2d"] = pairs;
  if (cd.has_truth)
    j["truth"] = {cd.truth.rho, cd.truth.eps, cd.truth.lam, cd.truth.p_init};
  else
    j["truth"] = nullptr;
  return j;
}

inline Json train_report_to_json(const TrainReport& r) {
  Json j;
  j["schema_version"] = 1;
  j["n_train"] = r.n_train;
  j["n_val"] = r.n_val;
  j["initial_val_loss"] = r.initial_val_loss;
  j["train_losses"] = r.train_losses;
  j["val_losses"] = r.val_losses;
  j["best_epoch"] = r.best_epoch;
  j["best_val_loss"] = r.best_val_loss;
  j["stopping_reason"] = r.stopping_reason;
  j["timing"] = {{"wall_seconds", r.wall_seconds}};
  return j;
}

inline Json sbc_to_json(const SbcResult& r) {
  Json j;
  j["n_runs"] = r.n_runs;
  j["n_draws"] = r.n_draws;
  Json per_dim = Json::array();
  for (int d = 0; d < ModelParams::kDim; ++d) {
    per_dim.push_back({{"dim", ModelParams::dim_name(d)},
                       {"ks_stat", r.ks[d].statistic},
                       {"ks_p", r.ks[d].p_value},
                       {"ranks", r.ranks[d]}});
  }
  j["dims"] = per_dim;
  return j;
}

inline Json ppc_to_json(const PpcResult& r) {
  Json j;
  j["n"] = r.n;
  Json summaries = Json::array();
  for (const auto& s : r.summaries) {
    Json q;
    for (std::size_t i = 0; i < s.sim_quantiles.size(); ++i) {
      char key[8];
      std::snprintf(key, sizeof(key), "q%02d", static_cast<int>(kPpcQuantiles[i] * 100));
      q[key] = s.sim_quantiles[i];
    }
    summaries.push_back({{"name", s.name},
                         {"observed", s.observed},
                         {"observed_quantile", s.observed_quantile},
                         {"sim_quantiles", q}});
  }
  j["summaries"] = summaries;
  return j;
}

}  // namespace gnpe

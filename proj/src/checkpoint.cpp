/* Copyright (c) 2026 The locate Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

// Checkpoint layout, all integers little-endian:
//   "LOCT" | u32 version | u64 n | n bytes of JSON config
//   u32 record count | records
//   record = u32 name length | name | u32 ndim | u64 dims[ndim] | f64 data
// Adam moments are stored as records "adam.m/<param>" and "adam.v/<param>".

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "locate/trainer.hpp"

namespace locate {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'L', 'O', 'C', 'T'};

json model_config_json(const ModelConfig& c) {
  return {{"seq_len", c.seq_len},
          {"snippet_frames", c.snippet_frames},
          {"dim", c.dim},
          {"encoder_layers", c.encoder_layers},
          {"decoder_layers", c.decoder_layers},
          {"heads", c.heads},
          {"samples", c.samples},
          {"queries", c.queries},
          {"num_classes", c.num_classes},
          {"ffn_width", c.ffn_width},
          {"seed", c.seed}};
}

ModelConfig model_config_from(const json& j) {
  ModelConfig c;
  c.seq_len = j.at("seq_len").get<std::size_t>();
  c.snippet_frames = j.at("snippet_frames").get<std::size_t>();
  c.dim = j.at("dim").get<std::size_t>();
  c.encoder_layers = j.at("encoder_layers").get<std::size_t>();
  c.decoder_layers = j.at("decoder_layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.samples = j.at("samples").get<std::size_t>();
  c.queries = j.at("queries").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.ffn_width = j.at("ffn_width").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

json train_config_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"grad_clip_norm", c.grad_clip_norm ? json(*c.grad_clip_norm) : json(nullptr)},
          {"seed", c.seed},
          {"lambda_iou", c.loss.iou},
          {"lambda_l1", c.loss.l1},
          {"cb_beta", c.cb_beta},
          {"cb_gamma", c.cb_gamma},
          {"schedule", c.schedule == LrSchedule::kCosine ? "cosine" : "constant"},
          {"score_threshold", c.score_threshold},
          {"nms_iou", c.nms_iou},
          {"eval_every", c.eval_every},
          {"standardize_inputs", c.standardize_inputs}};
}

TrainConfig train_config_from(const json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.eps = j.at("eps").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  if (!j.at("grad_clip_norm").is_null()) c.grad_clip_norm = j.at("grad_clip_norm").get<double>();
  else c.grad_clip_norm.reset();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.loss.iou = j.at("lambda_iou").get<double>();
  c.loss.l1 = j.at("lambda_l1").get<double>();
  c.cb_beta = j.at("cb_beta").get<double>();
  c.cb_gamma = j.at("cb_gamma").get<double>();
  c.schedule = j.at("schedule").get<std::string>() == "cosine" ? LrSchedule::kCosine
                                                                : LrSchedule::kConstant;
  c.score_threshold = j.at("score_threshold").get<double>();
  c.nms_iou = j.at("nms_iou").get<double>();
  c.eval_every = j.at("eval_every").get<std::size_t>();
  c.standardize_inputs = j.at("standardize_inputs").get<bool>();
  return c;
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void record(const std::string& name, const Tensor& t) {
    u32(static_cast<std::uint32_t>(name.size()));
    bytes(name.data(), name.size());
    u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) u64(d);
    for (double v : t.values()) f64(v);
  }
  const std::string& data() const { return buf_; }

 private:
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : buf_(std::move(data)) {}
  void need(std::size_t n, const char* what) {
    if (buf_.size() - pos_ < n) throw DataError(std::string("checkpoint truncated reading ") + what);
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const char* what) { return le<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return le<std::uint64_t>(what); }
  double f64(const char* what) { return std::bit_cast<double>(le<std::uint64_t>(what)); }
  bool done() const { return pos_ == buf_.size(); }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  template <typename T>
  T le(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace

Checkpoint make_checkpoint(const Model& model, const TrainConfig& train,
                           const OptimizerState* optimizer, const ClassStats& stats,
                           const std::vector<std::string>& class_names, std::uint64_t data_seed) {
  Checkpoint c;
  c.model = model.config();
  c.train = train;
  c.step = optimizer ? optimizer->step : 0;
  c.data_seed = data_seed;
  c.stats = stats;
  c.class_names = class_names;
  c.input_norm = model.input_normalization();
  for (const Parameter& p : model.params().all()) c.params.push_back({p.name, p.value, Tensor()});
  if (optimizer && !optimizer->m.empty()) c.optimizer = *optimizer;
  return c;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model model(ckpt.model);
  try {
    model.set_input_normalization(ckpt.input_norm);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint input normalization: ") + e.what());
  }
  ParameterStore& store = model.params();
  if (ckpt.params.size() != store.size())
    throw DataError("checkpoint has " + std::to_string(ckpt.params.size()) +
                    " parameters, model expects " + std::to_string(store.size()));
  for (const Parameter& p : ckpt.params) {
    const auto idx = store.find(p.name);
    if (!idx) throw DataError("checkpoint parameter '" + p.name + "' is not part of the model");
    if (store[*idx].value.shape() != p.value.shape())
      throw DataError("checkpoint parameter '" + p.name + "' has shape " +
                      shape_string(p.value.shape()) + ", model expects " +
                      shape_string(store[*idx].value.shape()));
    store[*idx].value = p.value;
  }
  return model;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  json cfg;
  cfg["model"] = model_config_json(ckpt.model);
  cfg["train"] = train_config_json(ckpt.train);
  cfg["step"] = ckpt.step;
  cfg["data_seed"] = ckpt.data_seed;
  cfg["class_counts"] = ckpt.stats.counts;
  cfg["class_names"] = ckpt.class_names;
  cfg["has_optimizer"] = ckpt.optimizer.has_value();
  cfg["input_norm"] = {{"shift", ckpt.input_norm.shift}, {"scale", ckpt.input_norm.scale}};
  const std::string text = cfg.dump();

  Writer w;
  w.bytes(kMagic, 4);
  w.u32(Checkpoint::kVersion);
  w.u64(text.size());
  w.bytes(text.data(), text.size());
  std::size_t records = ckpt.params.size();
  if (ckpt.optimizer) records += 2 * ckpt.params.size();
  w.u32(static_cast<std::uint32_t>(records));
  for (const Parameter& p : ckpt.params) w.record(p.name, p.value);
  if (ckpt.optimizer) {
    if (ckpt.optimizer->m.size() != ckpt.params.size() ||
        ckpt.optimizer->v.size() != ckpt.params.size())
      throw DataError("optimizer state does not match the parameters");
    for (std::size_t i = 0; i < ckpt.params.size(); ++i)
      w.record("adam.m/" + ckpt.params[i].name, ckpt.optimizer->m[i]);
    for (std::size_t i = 0; i < ckpt.params.size(); ++i)
      w.record("adam.v/" + ckpt.params[i].name, ckpt.optimizer->v[i]);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}));
  const std::string where = path.string() + ": ";

  if (r.bytes(4, "magic") != std::string(kMagic, 4))
    throw DataError(where + "not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32("version");
  if (version != Checkpoint::kVersion)
    throw DataError(where + "unsupported checkpoint version " + std::to_string(version));
  const std::uint64_t json_len = r.u64("config length");
  if (json_len > r.remaining()) throw DataError(where + "checkpoint truncated reading config");

  Checkpoint c;
  bool has_optimizer = false;
  try {
    const json cfg = json::parse(r.bytes(json_len, "config"));
    c.model = model_config_from(cfg.at("model"));
    c.train = train_config_from(cfg.at("train"));
    c.step = cfg.at("step").get<std::uint64_t>();
    c.data_seed = cfg.at("data_seed").get<std::uint64_t>();
    c.stats.counts = cfg.at("class_counts").get<std::vector<std::int64_t>>();
    c.stats.beta = c.train.cb_beta;
    c.stats.gamma = c.train.cb_gamma;
    c.class_names = cfg.at("class_names").get<std::vector<std::string>>();
    has_optimizer = cfg.at("has_optimizer").get<bool>();
    c.input_norm.shift = cfg.at("input_norm").at("shift").get<std::vector<double>>();
    c.input_norm.scale = cfg.at("input_norm").at("scale").get<double>();
  } catch (const json::exception& e) {
    throw DataError(where + "bad checkpoint config: " + e.what());
  }
  try {
    c.model.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(where + e.what());
  }
  if (c.stats.counts.size() != c.model.num_classes + 1)
    throw DataError(where + "class counts do not match the model's class count");

  std::vector<std::pair<std::string, Tensor>> records;
  const std::uint32_t count = r.u32("record count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32("record name length");
    std::string name = r.bytes(name_len, "record name");
    const std::uint32_t ndim = r.u32("record rank");
    if (ndim > 8) throw DataError(where + "record '" + name + "' has implausible rank");
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const std::uint64_t dim = r.u64("record shape");
      if (dim == 0 || dim > r.remaining() / 8 + 1)
        throw DataError(where + "record '" + name + "' has an invalid shape");
      numel *= dim;
      shape.push_back(static_cast<std::size_t>(dim));
    }
    if (numel > r.remaining() / 8)
      throw DataError(where + "record '" + name + "' is truncated (larger than the remaining file)");
    std::vector<double> data(numel);
    for (double& v : data) v = r.f64("record data");
    records.emplace_back(std::move(name), Tensor(shape, std::move(data)));
  }
  if (!r.done()) throw DataError(where + "trailing bytes after the last record");

  const std::size_t n_params = has_optimizer ? records.size() / 3 : records.size();
  if (has_optimizer && records.size() % 3 != 0)
    throw DataError(where + "optimizer records do not match the parameters");
  for (std::size_t i = 0; i < n_params; ++i)
    c.params.push_back({records[i].first, std::move(records[i].second), Tensor()});
  if (has_optimizer) {
    OptimizerState opt;
    opt.step = c.step;
    for (std::size_t i = 0; i < n_params; ++i) {
      auto& m = records[n_params + i];
      auto& v = records[2 * n_params + i];
      if (m.first != "adam.m/" + c.params[i].name || v.first != "adam.v/" + c.params[i].name ||
          m.second.shape() != c.params[i].value.shape() ||
          v.second.shape() != c.params[i].value.shape())
        throw DataError(where + "optimizer record mismatch for '" + c.params[i].name + "'");
      opt.m.push_back(std::move(m.second));
      opt.v.push_back(std::move(v.second));
    }
    c.optimizer = std::move(opt);
  }
  // Shape agreement with the configured architecture.
  try {
    (void)model_from_checkpoint(c);
  } catch (const DataError& e) {
    throw DataError(where + e.what());
  }
  return c;
}

}  // namespace locate

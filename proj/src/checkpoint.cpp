#include "hatl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "hatl/errors.hpp"

namespace hatl {

namespace {

constexpr char kMagic[8] = {'H', 'A', 'T', 'L', 'C', 'K', 'P', 'T'};

void put_u64(std::string& out, std::uint64_t v, int bytes = 8) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_name(std::string& out, char tag, const std::string& name) {
  out.push_back(tag);
  put_u64(out, name.size(), 4);
  out += name;
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string source) : b_(bytes), source_(std::move(source)) {}

  std::uint64_t u(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n) const {
    if (pos_ + n > b_.size() || pos_ + n < pos_)
      throw CheckpointError(source_ + ": truncated checkpoint at byte " + std::to_string(pos_));
  }
  const std::string& source() const { return source_; }

 private:
  const std::string& b_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void Checkpoint::put(const std::string& name, Matrix m) {
  for (auto& [n, v] : arrays)
    if (n == name) {
      v = std::move(m);
      return;
    }
  arrays.emplace_back(name, std::move(m));
}

void Checkpoint::put(const std::string& name, std::string s) {
  for (auto& [n, v] : strings)
    if (n == name) {
      v = std::move(s);
      return;
    }
  strings.emplace_back(name, std::move(s));
}

const Matrix* Checkpoint::array(const std::string& name) const {
  for (const auto& [n, v] : arrays)
    if (n == name) return &v;
  return nullptr;
}

const std::string* Checkpoint::string(const std::string& name) const {
  for (const auto& [n, v] : strings)
    if (n == name) return &v;
  return nullptr;
}

const Matrix& Checkpoint::require_array(const std::string& name) const {
  if (const Matrix* m = array(name)) return *m;
  throw CheckpointError("checkpoint: missing array " + name);
}

const std::string& Checkpoint::require_string(const std::string& name) const {
  if (const std::string* s = string(name)) return *s;
  throw CheckpointError("checkpoint: missing record " + name);
}

std::string Checkpoint::serialize() const {
  std::string out(kMagic, sizeof kMagic);
  put_u64(out, kCheckpointVersion, 4);
  for (const auto& [name, s] : strings) {
    put_name(out, 'S', name);
    put_u64(out, s.size());
    out += s;
  }
  for (const auto& [name, m] : arrays) {
    put_name(out, 'A', name);
    put_u64(out, static_cast<std::uint64_t>(m.rows()));
    put_u64(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(m.data()[i]));
  }
  put_name(out, 'E', "");
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes, const std::string& source) {
  Reader r(bytes, source);
  if (r.str(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) throw CheckpointError(source + ": bad magic");
  const auto version = r.u(4);
  if (version != kCheckpointVersion)
    throw CheckpointError(source + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  for (;;) {
    const char tag = static_cast<char>(r.u(1));
    const std::string name = r.str(static_cast<std::size_t>(r.u(4)));
    if (tag == 'E') break;
    if (tag == 'S') {
      ck.strings.emplace_back(name, r.str(static_cast<std::size_t>(r.u(8))));
    } else if (tag == 'A') {
      const auto rows = r.u(8), cols = r.u(8);
      if (rows > (1u << 28) || cols > (1u << 28)) throw CheckpointError(source + ": implausible shape for " + name);
      r.need(static_cast<std::size_t>(rows * cols * 8));
      Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<double>(r.u(8));
      ck.arrays.emplace_back(name, std::move(m));
    } else {
      throw CheckpointError(source + ": unknown record tag");
    }
  }
  return ck;
}

void Checkpoint::write(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path);
  const std::string bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed: " + path);
}

Checkpoint Checkpoint::read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return deserialize(os.str(), path);
}

std::string model_config_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "input_dim = " << c.input_dim << "\nbackbone_width = " << c.backbone_width << "\nn_layers = " << c.n_layers
     << "\nhidden = " << c.hidden << "\nencoder_layers = " << c.encoder_layers << "\ngloss_vocab = " << c.gloss_vocab
     << "\ntext_vocab = " << c.text_vocab << "\nmax_text_len = " << c.max_text_len
     << "\ninit_scale = " << fmt_double(c.init_scale) << "\n";
  return os.str();
}

ModelConfig model_config_from(KeyValues& kv, ModelConfig c) {
  c.input_dim = kv.get_int("input_dim", c.input_dim);
  c.backbone_width = kv.get_int("backbone_width", c.backbone_width);
  c.n_layers = kv.get_int("n_layers", c.n_layers);
  c.hidden = kv.get_int("hidden", c.hidden);
  c.encoder_layers = kv.get_int("encoder_layers", c.encoder_layers);
  c.gloss_vocab = kv.get_int("gloss_vocab", c.gloss_vocab);
  c.text_vocab = kv.get_int("text_vocab", c.text_vocab);
  c.max_text_len = kv.get_int("max_text_len", c.max_text_len);
  c.init_scale = kv.get_double("init_scale", c.init_scale);
  return c;
}

void put_model(Checkpoint& ck, const LayeredModel& m, bool backbone_only) {
  ck.put("kind", std::string(backbone_only ? "backbone" : "model"));
  ck.put("model.config", model_config_text(m.config()));
  for (const auto& p : m.params())
    if (!backbone_only || p.group >= 1) ck.put("param/" + p.name, p.value);
}

ModelConfig checkpoint_model_config(const Checkpoint& ck) {
  KeyValues kv = KeyValues::parse(ck.require_string("model.config"), "checkpoint model.config");
  ModelConfig c = model_config_from(kv);
  kv.require_consumed();
  c.validate();
  return c;
}

ParamSnapshot checkpoint_snapshot(const Checkpoint& ck) {
  ParamSnapshot s;
  for (const auto& [name, m] : ck.arrays)
    if (name.rfind("param/", 0) == 0) {
      s.names.push_back(name.substr(6));
      s.values.push_back(m);
    }
  if (const std::string* e = ck.string("meta.epoch")) s.epoch = std::stoi(*e);
  return s;
}

LayeredModel model_from_checkpoint(const Checkpoint& ck) {
  if (ck.require_string("kind") != "model")
    throw CheckpointError("checkpoint holds a " + ck.require_string("kind") + ", not a full model");
  LayeredModel m = LayeredModel::build(checkpoint_model_config(ck), 0);
  m.restore(checkpoint_snapshot(ck));
  return m;
}

void put_optimizer(Checkpoint& ck, const AdamW& opt, const std::vector<ad::Param>& params) {
  ck.put("adam.t", Matrix::Constant(1, 1, static_cast<double>(opt.steps_taken())));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!opt.active(i)) continue;
    ck.put("adam.m/" + params[i].name, opt.first_moment(i));
    ck.put("adam.v/" + params[i].name, opt.second_moment(i));
  }
}

void get_optimizer(const Checkpoint& ck, AdamW& opt, const std::vector<ad::Param>& params) {
  std::vector<Matrix> m(params.size()), v(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!opt.active(i)) continue;
    m[i] = ck.require_array("adam.m/" + params[i].name);
    v[i] = ck.require_array("adam.v/" + params[i].name);
  }
  opt.set_state(static_cast<long>(ck.require_array("adam.t")(0, 0)), std::move(m), std::move(v));
}

void put_controller(Checkpoint& ck, const Controller& c) {
  const ControllerState& s = c.state();
  std::ostringstream os;
  os << "phase = " << static_cast<int>(s.phase) << "\nepoch = " << s.epoch << "\nnext_layer = " << s.next_layer
     << "\npending_layer = " << s.pending_layer << "\nplateau_streak = " << s.plateau_streak
     << "\nstale_epochs = " << s.stale_epochs << "\ncooldown_remaining = " << s.cooldown_remaining << "\n";
  ck.put("ctrl.state", os.str());
  const auto n = static_cast<Eigen::Index>(s.deltas.size());
  ck.put("ctrl.deltas", Matrix(Eigen::Map<const Matrix>(s.deltas.data(), 1, n)));
  ck.put("ctrl.taus", Matrix(Eigen::Map<const Matrix>(s.taus.data(), 1, n)));
  for (std::size_t i = 0; i < s.histories.size(); ++i) {
    const auto& h = s.histories[i];
    const auto k = static_cast<Eigen::Index>(h.values().size());
    ck.put("ctrl.history/" + std::to_string(i), Matrix(Eigen::Map<const Matrix>(h.values().data(), 1, k)));
    ck.put("ctrl.best/" + std::to_string(i), Matrix::Constant(1, 1, h.best()));
  }
  const TrainableSet& u = c.trainable();
  Matrix flags(1, u.n_layers() + 1);
  for (int g = 0; g <= u.n_layers(); ++g) flags(0, g) = u.contains(g) ? 1.0 : 0.0;
  ck.put("ctrl.trainable", flags);
}

void get_controller(const Checkpoint& ck, Controller& c) {
  KeyValues kv = KeyValues::parse(ck.require_string("ctrl.state"), "checkpoint ctrl.state");
  ControllerState s;
  s.phase = static_cast<Phase>(kv.get_int("phase", 0));
  s.epoch = kv.get_int("epoch", 0);
  s.next_layer = kv.get_int("next_layer", 0);
  s.pending_layer = kv.get_int("pending_layer", 0);
  s.plateau_streak = kv.get_int("plateau_streak", 0);
  s.stale_epochs = kv.get_int("stale_epochs", 0);
  s.cooldown_remaining = kv.get_int("cooldown_remaining", 0);
  kv.require_consumed();
  const Matrix& d = ck.require_array("ctrl.deltas");
  const Matrix& t = ck.require_array("ctrl.taus");
  s.deltas.assign(d.data(), d.data() + d.size());
  s.taus.assign(t.data(), t.data() + t.size());
  for (std::size_t i = 0; i < c.monitored().size(); ++i) {
    const Matrix& h = ck.require_array("ctrl.history/" + std::to_string(i));
    MetricHistory mh(c.monitored()[i].maximize, c.config().window);
    mh.restore(std::vector<double>(h.data(), h.data() + h.size()), ck.require_array("ctrl.best/" + std::to_string(i))(0, 0));
    s.histories.push_back(std::move(mh));
  }
  const Matrix& flags = ck.require_array("ctrl.trainable");
  TrainableSet u(static_cast<int>(flags.cols()) - 1);
  for (int g = 1; g < flags.cols(); ++g)
    if (flags(0, g) != 0.0) u.add(g);
  c.restore_state(std::move(s), std::move(u));
}

}  // namespace hatl

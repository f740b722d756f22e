#include "hatl/data.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "hatl/errors.hpp"

namespace hatl::data {

namespace {

constexpr std::uint64_t kWordStream = 0x9e3779b97f4a7c15ULL;

std::vector<int> seeded_permutation(int n, std::uint64_t seed) {
  std::vector<int> p(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
  std::mt19937_64 rng(seed);
  for (int i = n - 1; i > 0; --i) std::swap(p[static_cast<std::size_t>(i)], p[rng() % static_cast<std::uint64_t>(i + 1)]);
  return p;
}

Matrix gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> n(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = n(rng);
  return m;
}

int uniform(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double sentence_capacity(const DatasetSpec& s) {
  double total = 0.0;
  for (int len = s.gloss_len_min; len <= s.gloss_len_max; ++len)
    total += s.gloss_vocab * std::pow(s.gloss_vocab - 1.0, len - 1);
  return total;
}

std::string join(const TokenSeq& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(seq[i]);
  }
  return out;
}

std::vector<std::string_view> split_on(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t p = s.find(sep, start);
    out.push_back(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

TokenSeq parse_ints(std::string_view field, const std::string& file, std::size_t line, const char* what) {
  TokenSeq out;
  for (std::string_view tok : split_on(field, ' ')) {
    if (tok.empty()) continue;
    const std::string t(tok);
    char* end = nullptr;
    const long v = std::strtol(t.c_str(), &end, 10);
    if (*end != '\0') throw ParseError(file, line, std::string("bad ") + what + " token '" + t + "'");
    out.push_back(static_cast<TokenId>(v));
  }
  return out;
}

}  // namespace

void DatasetSpec::validate() const {
  if (gloss_vocab < 2) throw ConfigError("dataset: gloss_vocab must be >= 2");
  if (function_words < 0) throw ConfigError("dataset: function_words must be >= 0");
  if (pretrain_samples < 1 || train_samples < 1 || dev_samples < 1 || test_samples < 1)
    throw ConfigError("dataset: every split needs at least one sample");
  if (gloss_len_min < 1 || gloss_len_max < gloss_len_min)
    throw ConfigError("dataset: need 1 <= gloss_len_min <= gloss_len_max");
  if (dur_min < 1 || dur_max < dur_min) throw ConfigError("dataset: need 1 <= dur_min <= dur_max");
  if (feature_dim < 1) throw ConfigError("dataset: feature_dim must be >= 1");
  if (nuisance_dims < 0 || nuisance_dims >= feature_dim)
    throw ConfigError("dataset: need 0 <= nuisance_dims < feature_dim");
  if (!(nuisance_noise >= 0)) throw ConfigError("dataset: nuisance_noise must be >= 0");
  if (!(noise >= 0)) throw ConfigError("dataset: noise must be >= 0");
  if (!(remap_fraction >= 0 && remap_fraction <= 1)) throw ConfigError("dataset: remap_fraction must lie in [0, 1]");
  if (!(proto_mean_scale >= 0) || !(proto_dev_scale > 0)) throw ConfigError("dataset: bad prototype scales");
  if (signers < 1) throw ConfigError("dataset: signers must be >= 1");
  const double total = static_cast<double>(pretrain_samples) + train_samples + dev_samples + test_samples;
  if (total > 0.5 * sentence_capacity(*this))
    throw ConfigError("dataset: too few distinct gloss sentences for disjoint splits");
}

DatasetSpec DatasetSpec::from(KeyValues& kv) {
  DatasetSpec s;
  s.gloss_vocab = kv.get_int("gloss_vocab", s.gloss_vocab);
  s.function_words = kv.get_int("function_words", s.function_words);
  s.pretrain_samples = kv.get_int("pretrain_samples", s.pretrain_samples);
  s.train_samples = kv.get_int("train_samples", s.train_samples);
  s.dev_samples = kv.get_int("dev_samples", s.dev_samples);
  s.test_samples = kv.get_int("test_samples", s.test_samples);
  s.gloss_len_min = kv.get_int("gloss_len_min", s.gloss_len_min);
  s.gloss_len_max = kv.get_int("gloss_len_max", s.gloss_len_max);
  s.dur_min = kv.get_int("dur_min", s.dur_min);
  s.dur_max = kv.get_int("dur_max", s.dur_max);
  s.feature_dim = kv.get_int("feature_dim", s.feature_dim);
  s.noise = kv.get_double("noise", s.noise);
  s.rotation_deg = kv.get_double("rotation_deg", s.rotation_deg);
  s.remap_fraction = kv.get_double("remap_fraction", s.remap_fraction);
  s.proto_mean_scale = kv.get_double("proto_mean_scale", s.proto_mean_scale);
  s.proto_dev_scale = kv.get_double("proto_dev_scale", s.proto_dev_scale);
  s.nuisance_dims = kv.get_int("nuisance_dims", s.nuisance_dims);
  s.nuisance_noise = kv.get_double("nuisance_noise", s.nuisance_noise);
  s.signers = kv.get_int("signers", s.signers);
  s.signer_spread = kv.get_double("signer_spread", s.signer_spread);
  s.seed = static_cast<std::uint64_t>(kv.get_long("seed", static_cast<long>(s.seed)));
  s.validate();
  return s;
}

DatasetSpec DatasetSpec::load(const std::string& path) {
  KeyValues kv = KeyValues::load(path);
  DatasetSpec s = from(kv);
  kv.require_consumed();
  return s;
}

std::string DatasetSpec::echo() const {
  std::ostringstream os;
  os.precision(17);
  os << "gloss_vocab = " << gloss_vocab << "\nfunction_words = " << function_words
     << "\npretrain_samples = " << pretrain_samples << "\ntrain_samples = " << train_samples
     << "\ndev_samples = " << dev_samples << "\ntest_samples = " << test_samples
     << "\ngloss_len_min = " << gloss_len_min << "\ngloss_len_max = " << gloss_len_max
     << "\ndur_min = " << dur_min << "\ndur_max = " << dur_max << "\nfeature_dim = " << feature_dim
     << "\nnoise = " << noise << "\nrotation_deg = " << rotation_deg << "\nremap_fraction = " << remap_fraction
     << "\nproto_mean_scale = " << proto_mean_scale << "\nproto_dev_scale = " << proto_dev_scale
     << "\nnuisance_dims = " << nuisance_dims << "\nnuisance_noise = " << nuisance_noise
     << "\nsigners = " << signers << "\nsigner_spread = " << signer_spread << "\nseed = " << seed << "\n";
  return os.str();
}

const Split& Dataset::split(const std::string& name) const {
  if (name == "pretrain") return pretrain;
  if (name == "train") return train;
  if (name == "dev") return dev;
  if (name == "test") return test;
  throw ConfigError("unknown split '" + name + "'");
}

Prototypes make_prototypes(const DatasetSpec& spec) {
  const int V = spec.gloss_vocab, d = spec.feature_dim;
  std::mt19937_64 rng(spec.seed);
  Prototypes p;
  Matrix mean = gaussian(rng, 1, d, spec.proto_mean_scale);
  Matrix dev = gaussian(rng, V, d, spec.proto_dev_scale);
  Matrix fresh = gaussian(rng, V, d, spec.proto_dev_scale);
  const int s = d - spec.nuisance_dims;
  p.signal_dims = s;
  for (Matrix* m : {&mean, &dev, &fresh}) m->rightCols(spec.nuisance_dims).setZero();
  p.source = dev.rowwise() + mean.row(0);

  p.remapped.assign(static_cast<std::size_t>(V), false);
  const int n_remap = static_cast<int>(std::ceil(spec.remap_fraction * V - 1e-9));
  const std::vector<int> order = seeded_permutation(V, spec.seed ^ 0x5bd1e995ULL);
  for (int i = 0; i < n_remap; ++i) p.remapped[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;

  const double th = spec.rotation_deg * std::numbers::pi / 180.0;
  p.rotation = Matrix::Identity(d, d);
  auto plane = [&](int a, int b) {
    p.rotation(a, a) = std::cos(th);
    p.rotation(a, b) = -std::sin(th);
    p.rotation(b, a) = std::sin(th);
    p.rotation(b, b) = std::cos(th);
  };
  // Pairwise planes inside the signal block, then signal/nuisance planes.
  for (int k = 0; k + 1 < s; k += 2) plane(k, k + 1);
  if (spec.nuisance_dims > 0) {
    const Matrix within = p.rotation;
    p.rotation = Matrix::Identity(d, d);
    for (int k = 0; k < std::min(s, spec.nuisance_dims); ++k) plane(k, s + k);
    p.rotation = p.rotation * within;
  }

  p.unrotated = p.source;
  for (int g = 0; g < V; ++g)
    if (p.remapped[static_cast<std::size_t>(g)]) p.unrotated.row(g) = mean.row(0) + fresh.row(g);
  // Rows are feature vectors, so R x becomes x^T R^T.
  p.shifted = p.unrotated * p.rotation.transpose();
  return p;
}

TokenSeq transduce(const DatasetSpec& spec, const TokenSeq& gloss) {
  const int V = spec.gloss_vocab, F = spec.function_words;
  const std::vector<int> perm = seeded_permutation(V, spec.seed ^ kWordStream);
  std::vector<TokenSeq> blocks;
  for (TokenId g : gloss) {
    TokenSeq b{static_cast<TokenId>(kFirstWord + perm[static_cast<std::size_t>(g - 1)])};
    if (F > 0 && g % 3 == 0) b.push_back(static_cast<TokenId>(kFirstWord + V + g % F));
    blocks.push_back(std::move(b));
  }
  TokenSeq out;
  for (std::size_t i = 0; i < blocks.size();) {
    if (i + 1 < blocks.size() && gloss[i] % 4 == 1) {
      out.insert(out.end(), blocks[i + 1].begin(), blocks[i + 1].end());
      out.insert(out.end(), blocks[i].begin(), blocks[i].end());
      i += 2;
    } else {
      out.insert(out.end(), blocks[i].begin(), blocks[i].end());
      i += 1;
    }
  }
  return out;
}

double quantize(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  const Prototypes protos = make_prototypes(spec);
  const int d = spec.feature_dim;
  std::mt19937_64 rng(spec.seed * 6364136223846793005ULL + 1442695040888963407ULL);
  const Matrix signer_offsets =
      spec.signers > 1 ? gaussian(rng, spec.signers, d, spec.signer_spread) : Matrix::Zero(1, d);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::set<TokenSeq> used;
  auto draw_sentence = [&] {
    const long limit = 1000L * (spec.pretrain_samples + spec.train_samples + spec.dev_samples + spec.test_samples);
    for (long attempt = 0; attempt < limit; ++attempt) {
      const int len = uniform(rng, spec.gloss_len_min, spec.gloss_len_max);
      TokenSeq g;
      while (static_cast<int>(g.size()) < len) {
        const TokenId t = static_cast<TokenId>(uniform(rng, 1, spec.gloss_vocab));
        if (g.empty() || g.back() != t) g.push_back(t);
      }
      if (used.insert(g).second) return g;
    }
    throw ConfigError("dataset: could not draw enough distinct gloss sentences");
  };

  // Shifted splits rotate whole frames (prototype, offset and noise).
  auto make_split = [&](const char* name, int count, const Matrix& table, const Matrix* rotation) {
    Split out;
    for (int i = 0; i < count; ++i) {
      SampleRecord s;
      char id[64];
      std::snprintf(id, sizeof id, "%s-%04d", name, i);
      s.id = id;
      s.gloss = draw_sentence();
      s.text = transduce(spec, s.gloss);
      const int signer = spec.signers > 1 ? uniform(rng, 0, spec.signers - 1) : 0;
      std::vector<RowVector> rows;
      for (TokenId g : s.gloss) {
        const int dur = uniform(rng, spec.dur_min, spec.dur_max);
        for (int k = 0; k < dur; ++k) {
          RowVector r = table.row(g - 1) + signer_offsets.row(signer);
          for (int c = 0; c < d; ++c) r(c) += (c < d - spec.nuisance_dims ? spec.noise : spec.nuisance_noise) * noise(rng);
          if (rotation) r = r * rotation->transpose();
          rows.push_back(r.unaryExpr([](double v) { return quantize(v); }));
          s.frame_labels.push_back(g);
        }
      }
      s.frames.resize(static_cast<Eigen::Index>(rows.size()), d);
      for (std::size_t r = 0; r < rows.size(); ++r) s.frames.row(static_cast<Eigen::Index>(r)) = rows[r];
      out.push_back(std::move(s));
    }
    return out;
  };

  Dataset ds;
  ds.pretrain = make_split("pretrain", spec.pretrain_samples, protos.source, nullptr);
  ds.train = make_split("train", spec.train_samples, protos.unrotated, &protos.rotation);
  ds.dev = make_split("dev", spec.dev_samples, protos.unrotated, &protos.rotation);
  ds.test = make_split("test", spec.test_samples, protos.unrotated, &protos.rotation);
  return ds;
}

std::string format_sample(const SampleRecord& s) {
  std::string out = s.id + '\t' + join(s.gloss) + '\t' + join(s.text) + '\t' + join(s.frame_labels) + '\t';
  char buf[32];
  for (Eigen::Index r = 0; r < s.frames.rows(); ++r) {
    if (r) out += ';';
    for (Eigen::Index c = 0; c < s.frames.cols(); ++c) {
      if (c) out += ',';
      std::snprintf(buf, sizeof buf, "%.9g", s.frames(r, c));
      out += buf;
    }
  }
  return out;
}

SampleRecord parse_sample(const std::string& text, const std::string& file, std::size_t line) {
  const auto fields = split_on(text, '\t');
  if (fields.size() != 5)
    throw ParseError(file, line, "expected 5 tab-separated fields, got " + std::to_string(fields.size()));
  SampleRecord s;
  s.id = std::string(fields[0]);
  if (s.id.empty()) throw ParseError(file, line, "empty sample id");
  s.gloss = parse_ints(fields[1], file, line, "gloss");
  s.text = parse_ints(fields[2], file, line, "text");
  s.frame_labels = parse_ints(fields[3], file, line, "frame label");
  if (s.gloss.empty()) throw ParseError(file, line, "empty gloss sequence");

  const auto rows = split_on(fields[4], ';');
  std::vector<std::vector<double>> values;
  for (std::string_view row : rows) {
    std::vector<double> v;
    for (std::string_view tok : split_on(row, ',')) {
      const std::string t(tok);
      char* end = nullptr;
      const double x = std::strtod(t.c_str(), &end);
      if (t.empty() || *end != '\0') throw ParseError(file, line, "bad frame value '" + t + "'");
      v.push_back(x);
    }
    if (!values.empty() && v.size() != values.front().size())
      throw ParseError(file, line, "ragged frame rows");
    values.push_back(std::move(v));
  }
  if (values.size() != s.frame_labels.size())
    throw ParseError(file, line, "frame count " + std::to_string(values.size()) + " does not match " +
                                     std::to_string(s.frame_labels.size()) + " frame labels");
  s.frames.resize(static_cast<Eigen::Index>(values.size()), static_cast<Eigen::Index>(values.front().size()));
  for (std::size_t r = 0; r < values.size(); ++r)
    for (std::size_t c = 0; c < values[r].size(); ++c)
      s.frames(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = values[r][c];
  return s;
}

void save_split(const Split& split, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& s : split) out << format_sample(s) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

Split load_split(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, 0, "cannot open file");
  Split out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    if (in.eof()) throw ParseError(path, n, "truncated record (missing final newline)");
    out.push_back(parse_sample(line, path, n));
    if (!out.empty() && out.size() > 1 && out.back().frames.cols() != out.front().frames.cols())
      throw ParseError(path, n, "feature dimension differs from first record");
  }
  return out;
}

void save_dataset(const Dataset& d, const std::string& dir, const DatasetSpec* spec) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path p(dir);
  save_split(d.pretrain, (p / "pretrain.tsv").string());
  save_split(d.train, (p / "train.tsv").string());
  save_split(d.dev, (p / "dev.tsv").string());
  save_split(d.test, (p / "test.tsv").string());
  if (spec) {
    std::ofstream out(p / "spec.echo");
    out << spec->echo();
  }
}

Dataset load_dataset(const std::string& dir) {
  const std::filesystem::path p(dir);
  Dataset d;
  d.pretrain = load_split((p / "pretrain.tsv").string());
  d.train = load_split((p / "train.tsv").string());
  d.dev = load_split((p / "dev.tsv").string());
  d.test = load_split((p / "test.tsv").string());
  return d;
}

Batch make_batch(const Split& split, const std::vector<std::size_t>& indices, Eigen::Index frame_len,
                 std::size_t text_len) {
  Batch b;
  b.indices = indices;
  Eigen::Index G = frame_len;
  std::size_t S = text_len;
  for (std::size_t i : indices) {
    const SampleRecord& s = split.at(i);
    G = std::max(G, s.frames.rows());
    S = std::max(S, s.text.size() + 1);
  }
  for (std::size_t i : indices) {
    const SampleRecord& s = split[i];
    const Eigen::Index g = s.frames.rows();
    Matrix f = Matrix::Zero(G, s.frames.cols());
    f.topRows(g) = s.frames;
    b.frames.push_back(std::move(f));
    losses::Mask fm = losses::Mask::Constant(G, false);
    fm.head(g).setConstant(true);
    b.frame_mask.push_back(std::move(fm));
    TokenSeq labels = s.frame_labels;
    labels.resize(static_cast<std::size_t>(G), 0);
    b.frame_labels.push_back(std::move(labels));
    b.gloss.push_back(s.gloss);

    TokenSeq in{kBos}, tgt;
    in.insert(in.end(), s.text.begin(), s.text.end());
    tgt.insert(tgt.end(), s.text.begin(), s.text.end());
    tgt.push_back(kEos);
    losses::Mask tm = losses::Mask::Constant(static_cast<Eigen::Index>(S), false);
    tm.head(static_cast<Eigen::Index>(tgt.size())).setConstant(true);
    in.resize(S, kPad);
    tgt.resize(S, kPad);
    b.decoder_input.push_back(std::move(in));
    b.decoder_target.push_back(std::move(tgt));
    b.text_mask.push_back(std::move(tm));
  }
  return b;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed ^ (0x2545f4914f6cdd1dULL * static_cast<std::uint64_t>(epoch + 1)));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

std::vector<Batch> batch_iter(const Split& split, int batch_size, std::uint64_t seed, int epoch) {
  if (batch_size < 1) throw std::invalid_argument("batch_iter: batch_size must be >= 1");
  const auto order = epoch_order(split.size(), seed, epoch);
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    out.push_back(make_batch(split, std::vector<std::size_t>(order.begin() + static_cast<long>(start),
                                                             order.begin() + static_cast<long>(end))));
  }
  return out;
}

SplitStats split_stats(const Split& split) {
  SplitStats st;
  st.samples = split.size();
  if (split.empty()) return st;
  auto mean_cv = [&](auto get, double& mean, double& cv, int* lo, int* hi) {
    double sum = 0, sq = 0;
    int mn = INT32_MAX, mx = 0;
    for (const auto& s : split) {
      const double v = static_cast<double>(get(s));
      sum += v;
      sq += v * v;
      mn = std::min(mn, static_cast<int>(v));
      mx = std::max(mx, static_cast<int>(v));
    }
    const double n = static_cast<double>(split.size());
    mean = sum / n;
    const double var = std::max(0.0, sq / n - mean * mean);
    cv = mean > 0 ? std::sqrt(var) / mean : 0.0;
    if (lo) *lo = mn;
    if (hi) *hi = mx;
  };
  mean_cv([](const SampleRecord& s) { return s.gloss.size(); }, st.gloss_len_mean, st.gloss_len_cv,
          &st.gloss_len_min, &st.gloss_len_max);
  mean_cv([](const SampleRecord& s) { return s.text.size(); }, st.text_len_mean, st.text_len_cv, &st.text_len_min,
          &st.text_len_max);
  mean_cv([](const SampleRecord& s) { return s.frames.rows(); }, st.frames_mean, st.frames_cv, nullptr, nullptr);
  return st;
}

}  // namespace hatl::data

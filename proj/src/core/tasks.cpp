#include <fstream>

#include "core/rng.hpp"
#include "core/train.hpp"

namespace bispike {

namespace {

// Majority-symbol parity task: a planted dominant symbol makes the labels
// learnable, but every label is assigned by an independent recount, so the
// rule is exactly "parity of the most frequent symbol, ties to the smallest".
constexpr int kSynthVocab = 16;

Dataset synth_split(uint64_t seed, const char* stream, int n, int len) {
  Dataset ds;
  ds.head = TaskHead::cls;
  ds.vocab = kSynthVocab;
  ds.n_classes = 2;
  ds.causal = false;
  RngStream rng(seed, stream_id(stream));
  for (int i = 0; i < n; ++i) {
    uint64_t base = static_cast<uint64_t>(i) * (static_cast<uint64_t>(len) + 1);
    int maj = static_cast<int>(rng.bits32(base + len) % kSynthVocab);
    std::vector<int32_t> seq(len);
    for (int j = 0; j < len; ++j) {
      uint32_t r = rng.bits32(base + j);
      if (r % 100 < 35) {
        seq[j] = maj;
      } else {
        seq[j] = static_cast<int32_t>((r / 100) % kSynthVocab);
      }
    }
    int counts[kSynthVocab] = {0};
    for (int32_t sym : seq) counts[sym]++;
    int best = 0;
    for (int sym = 1; sym < kSynthVocab; ++sym)
      if (counts[sym] > counts[best]) best = sym;
    ds.seqs.push_back(std::move(seq));
    ds.labels.push_back(best % 2);
  }
  return ds;
}

Dataset lm_split(const std::vector<uint8_t>& corpus, uint64_t seed, const char* stream, int n,
                 int len) {
  Dataset ds;
  ds.head = TaskHead::lm;
  ds.vocab = 256;
  ds.n_classes = 0;
  ds.causal = true;
  int64_t max_start = static_cast<int64_t>(corpus.size()) - len - 1;
  RngStream rng(seed, stream_id(stream));
  for (int i = 0; i < n; ++i) {
    int64_t start = static_cast<int64_t>(rng.bits32(static_cast<uint64_t>(i)) %
                                         static_cast<uint64_t>(max_start + 1));
    std::vector<int32_t> seq(len), tgt(len);
    for (int j = 0; j < len; ++j) {
      seq[j] = corpus[start + j];
      tgt[j] = corpus[start + j + 1];
    }
    ds.seqs.push_back(std::move(seq));
    ds.targets_lm.push_back(std::move(tgt));
  }
  return ds;
}

}  // namespace

Task make_task(const TrainConfig& cfg) {
  cfg.validate();
  Task task;
  if (cfg.task == "synth_cls") {
    task.train = synth_split(cfg.seed, "data/synth_train", cfg.train_size, cfg.seq_len);
    task.val = synth_split(cfg.seed, "data/synth_val", cfg.val_size, cfg.seq_len);
    return task;
  }
  if (cfg.task == "char_lm") {
    if (cfg.corpus_path.empty())
      throw ConfigError("char_lm task requires train.corpus_path");
    std::ifstream in(cfg.corpus_path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus file '" + cfg.corpus_path + "'");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    if (static_cast<int64_t>(bytes.size()) < cfg.seq_len + 2)
      throw ConfigError("corpus too small: " + std::to_string(bytes.size()) +
                        " bytes for seq_len " + std::to_string(cfg.seq_len));
    task.train = lm_split(bytes, cfg.seed, "data/lm_train", cfg.train_size, cfg.seq_len);
    task.val = lm_split(bytes, cfg.seed, "data/lm_val", cfg.val_size, cfg.seq_len);
    return task;
  }
  throw ConfigError("unknown task '" + cfg.task + "'");
}

Batch Dataset::gather(const std::vector<int64_t>& idx) const {
  Batch b;
  for (int64_t i : idx) {
    if (i < 0 || i >= static_cast<int64_t>(size()))
      throw StateError("dataset gather: index out of range");
    b.tokens.push_back(seqs[i]);
    if (!targets_lm.empty()) b.targets_lm.push_back(targets_lm[i]);
    if (!labels.empty()) b.labels.push_back(labels[i]);
  }
  return b;
}

Batch Dataset::slice(size_t begin, size_t end) const {
  std::vector<int64_t> idx;
  for (size_t i = begin; i < end && i < size(); ++i)
    idx.push_back(static_cast<int64_t>(i));
  return gather(idx);
}

}  // namespace bispike

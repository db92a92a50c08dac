#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "carbonopt/rag.hpp"

namespace carbonopt::fixtures {

inline const std::vector<std::string>& corpus_words() {
  static const std::vector<std::string> words{
      "carbon", "emission",  "edge",    "server",   "latency", "bandwidth", "power",   "renewable",
      "grid",   "intensity", "channel", "offload",  "energy",  "diffusion", "policy",  "reward",
      "user",   "device",    "aigc",    "image",    "noise",   "transmit",  "compute", "cycles",
      "solar",  "wind",      "battery", "schedule", "cost",    "budget",    "task",    "model"};
  return words;
}

inline std::string random_text(std::mt19937_64& rng, int min_words, int max_words,
                               const std::vector<std::string>& words = corpus_words()) {
  std::uniform_int_distribution<int> len(min_words, max_words);
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  std::uniform_int_distribution<int> sep(0, 5);
  std::string out;
  const int n = len(rng);
  for (int i = 0; i < n; ++i) {
    if (i) out += sep(rng) == 0 ? ", " : " ";
    out += words[pick(rng)];
  }
  return out;
}

/// Chunks with small vocabularies so that exact score ties actually occur.
inline std::vector<rag::KnowledgeChunk> random_chunks(std::mt19937_64& rng, int count) {
  std::vector<rag::KnowledgeChunk> chunks;
  for (int i = 0; i < count; ++i) {
    const std::string doc = "doc" + std::to_string(i % 7) + ".txt";
    const std::size_t start = static_cast<std::size_t>(i) * 800;
    std::string text = random_text(rng, 1, 12);
    chunks.push_back({rag::chunk_id_for(doc, start), doc, text, start, start + text.size()});
  }
  return chunks;
}

/// Reference top-k: score every chunk, full sort by (score desc, id asc).
inline std::vector<rag::RetrievalResult> brute_force_top_k(const rag::ChunkIndex& index, const std::string& query,
                                                           std::size_t k) {
  const rag::SparseVector q = index.embed(query);
  if (q.empty()) return {};
  std::vector<rag::RetrievalResult> all;
  for (std::size_t i = 0; i < index.chunks().size(); ++i) {
    double s = 0.0;
    for (const auto& [qi, qw] : q)
      for (const auto& [ci, cw] : index.vectors()[i])
        if (qi == ci) s += qw * cw;
    all.push_back({index.chunks()[i].chunk_id, s});
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.score != b.score ? a.score > b.score : a.chunk_id < b.chunk_id;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

}  // namespace carbonopt::fixtures

#include <random>

#include "todflow/pipeline.h"
#include "todflow/text.h"

namespace todflow {

size_t count_tokens(std::string_view text) { return split_whitespace(text).size(); }

namespace {

struct Blocks {
  std::vector<std::string> turns;  // each ends with "<turn_sep>\n"
  std::vector<size_t> sizes;
};

Blocks turn_blocks(const ConversationRecord& conv) {
  Blocks b;
  for (const auto& t : conv.turns) {
    b.turns.push_back(serialize_turn(t, Variant::kFull));
    b.sizes.push_back(count_tokens(b.turns.back()));
  }
  return b;
}

}  // namespace

std::vector<std::string> emit_training_sequences(const std::vector<ConversationRecord>& records,
                                                 const PipelineConfig& config) {
  config.validate();
  const std::string open = std::string(kConversationSep) + "\n";
  const size_t limit = config.max_sequence_length;
  std::vector<Blocks> blocks;
  for (const auto& r : records) blocks.push_back(turn_blocks(r));

  std::mt19937_64 rng(config.seed);
  std::vector<std::string> out;
  for (size_t c = 0; c < records.size(); ++c) {
    const Blocks& b = blocks[c];
    size_t total = 2;
    for (size_t s : b.sizes) total += s;
    if (total > limit) {
      // Each piece adds at least one new turn and keeps as much preceding
      // history as still fits.
      size_t end = 0;
      while (end < b.turns.size()) {
        size_t used = 1 + b.sizes[end];
        size_t last = end;
        while (last + 1 < b.turns.size() && used + b.sizes[last + 1] <= limit) used += b.sizes[++last];
        size_t first = end;
        while (first > 0 && used + b.sizes[first - 1] <= limit) used += b.sizes[--first];
        std::string piece = open;
        for (size_t t = first; t <= last; ++t) piece += b.turns[t];
        out.push_back(std::move(piece));
        end = last + 1;
      }
      continue;
    }
    std::string example = open;
    for (const auto& t : b.turns) example += t;
    example += open;
    if (config.padding && records.size() > 1) {
      size_t used = total;
      // Whole turns of randomly drawn other conversations, in order, until
      // the next one would overflow.
      for (int attempts = 0; attempts < 8; ++attempts) {
        size_t other = rng() % (records.size() - 1);
        if (other >= c) ++other;
        const Blocks& ob = blocks[other];
        size_t added = 0;
        for (size_t t = 0; t < ob.turns.size() && used + ob.sizes[t] <= limit; ++t, ++added) {
          example += ob.turns[t];
          used += ob.sizes[t];
        }
        if (added == 0 || added < ob.turns.size() || used + 1 > limit) break;
        example += open;
        used += 1;
      }
    }
    out.push_back(std::move(example));
  }
  return out;
}

std::string render_training_file(const std::vector<std::string>& examples) {
  std::string out;
  for (size_t i = 0; i < examples.size(); ++i) {
    if (i) out += "\n";
    out += examples[i];
  }
  return out;
}

}  // namespace todflow

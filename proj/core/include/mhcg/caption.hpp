#pragma once

#include <compare>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mhcg {

/// Fixed-length token sequence; the sign two agents exchange.
class Caption {
 public:
  Caption() = default;
  explicit Caption(std::vector<int> tokens) : tokens_(std::move(tokens)) {}
  Caption(std::initializer_list<int> tokens) : tokens_(tokens) {}

  std::span<const int> tokens() const { return tokens_; }
  std::size_t size() const { return tokens_.size(); }
  int operator[](std::size_t pos) const { return tokens_[pos]; }
  int& operator[](std::size_t pos) { return tokens_[pos]; }

  auto operator<=>(const Caption&) const = default;
  bool operator==(const Caption&) const = default;

  std::string to_string() const;

 private:
  std::vector<int> tokens_;
};

/// Throws InputError unless `c` has exactly `length` tokens, each in [0, vocab).
void validate_caption(const Caption& c, int vocab, int length);

/// V^L, or CapabilityError when it exceeds `limit`.
std::size_t caption_space_size(int vocab, int length, std::size_t limit);

/// Base-V index with position 0 most significant.
std::size_t caption_index(const Caption& c, int vocab);
Caption caption_from_index(std::size_t index, int vocab, int length);

}  // namespace mhcg

#include "mhcg/caption.hpp"

#include "mhcg/errors.hpp"

namespace mhcg {

std::string Caption::to_string() const {
  std::string out = "[";
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(tokens_[i]);
  }
  return out + "]";
}

void validate_caption(const Caption& c, int vocab, int length) {
  if (static_cast<int>(c.size()) != length)
    throw InputError("caption length " + std::to_string(c.size()) + " != " + std::to_string(length));
  for (int t : c.tokens())
    if (t < 0 || t >= vocab)
      throw InputError("token id " + std::to_string(t) + " outside vocabulary of size " + std::to_string(vocab));
}

std::size_t caption_space_size(int vocab, int length, std::size_t limit) {
  std::size_t n = 1;
  for (int i = 0; i < length; ++i) {
    n *= static_cast<std::size_t>(vocab);
    if (n > limit)
      throw CapabilityError("caption space V^L exceeds enumeration limit " + std::to_string(limit));
  }
  return n;
}

std::size_t caption_index(const Caption& c, int vocab) {
  std::size_t idx = 0;
  for (int t : c.tokens()) idx = idx * static_cast<std::size_t>(vocab) + static_cast<std::size_t>(t);
  return idx;
}

Caption caption_from_index(std::size_t index, int vocab, int length) {
  std::vector<int> tokens(static_cast<std::size_t>(length));
  for (int pos = length - 1; pos >= 0; --pos) {
    tokens[static_cast<std::size_t>(pos)] = static_cast<int>(index % static_cast<std::size_t>(vocab));
    index /= static_cast<std::size_t>(vocab);
  }
  return Caption(std::move(tokens));
}

}  // namespace mhcg

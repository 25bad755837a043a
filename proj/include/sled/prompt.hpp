#pragma once

#include <cstddef>
#include <vector>

namespace sled {

/// Ordered list of instructions; each instruction is the token-id list of
/// one edit atom. Token ids are world-assigned vocabulary indices.
struct Prompt {
    std::vector<std::vector<int>> instructions;

    std::size_t size() const { return instructions.size(); }
    bool empty() const { return instructions.empty(); }
};

/// Contiguous token span [begin, end) within the padded text sequence.
struct Span {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t length() const { return end - begin; }
    bool operator==(const Span&) const = default;
};

/// Result of resolving a Prompt against a fixed text length: concatenated
/// instruction tokens, pad-filled tail, and one span per instruction.
struct EncodedPrompt {
    std::vector<int> ids;     // length T, trailing entries all pad_id
    std::vector<Span> spans;  // one per instruction, in order
    std::size_t tau = 0;      // number of non-pad positions
    int pad_id = 0;
};

} // namespace sled

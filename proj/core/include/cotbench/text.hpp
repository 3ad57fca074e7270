#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace cotbench::text {

std::string_view trim(std::string_view s);
std::string to_lower(std::string_view s);

std::vector<std::string> split_whitespace(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);

// Number of whitespace-separated tokens.
std::size_t token_count(std::string_view s);

// Case-folded, punctuation-stripped, whitespace-collapsed form used for
// near-duplicate detection between candidate options.
std::string normalize_for_compare(std::string_view s);

bool starts_with_ci(std::string_view s, std::string_view prefix);

// Leading alphabetic word of `s`, lowercased ("Yes," -> "yes").
std::string first_word(std::string_view s);

}  // namespace cotbench::text

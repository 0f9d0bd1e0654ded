#pragma once

#include <string>
#include <unordered_set>
#include <vector>

namespace prag {

// Lowercase and split on non-alphanumeric bytes. Multi-byte UTF-8 sequences
// act as separators. This is the raw stream: no stopword or length filter;
// the toy encoder and the diversity metrics use it directly.
std::vector<std::string> tokenize(const std::string& text);

using StopwordSet = std::unordered_set<std::string>;

// Built-in English list (also shipped as data/stopwords.txt).
const StopwordSet& default_stopwords();

// One token per line, UTF-8; blank lines ignored.
StopwordSet load_stopwords(const std::string& path);

// Raw tokens minus stopwords and tokens shorter than min_len. This is the
// tf-idf / content-token stream.
std::vector<std::string> content_tokens(const std::string& text,
                                        const StopwordSet& stopwords = default_stopwords(),
                                        size_t min_len = 2);

}  // namespace prag

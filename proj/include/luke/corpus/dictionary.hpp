// Surface-name dictionary built from hyperlinks, and the string-matching
// annotator that uses it to attach entities to question/passage text.
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "luke/corpus/document.hpp"
#include "luke/corpus/tokenizer.hpp"
#include "luke/io.hpp"

namespace luke::corpus {

struct NameEntry {
  // title -> number of times the name links to it
  std::map<std::string, std::uint64_t> links;
  // occurrences of the name anywhere, linked or not
  std::uint64_t total_count = 0;

  std::uint64_t link_count() const {
    std::uint64_t n = 0;
    for (const auto& [_, c] : links) n += c;
    return n;
  }

  double link_probability() const {
    return total_count == 0 ? 0.0 : double(link_count()) / double(total_count);
  }
};

class EntityDictionary {
 public:
  // Names are normalized, space-joined words.
  const NameEntry* find(const std::string& name) const {
    auto it = names_.find(name);
    return it == names_.end() ? nullptr : &it->second;
  }

  // 0 for unknown names.
  double link_probability(const std::string& name) const {
    const NameEntry* e = find(name);
    return e ? e->link_probability() : 0.0;
  }

  NameEntry& entry(const std::string& name) { return names_[name]; }
  const std::map<std::string, NameEntry>& names() const { return names_; }
  bool empty() const { return names_.empty(); }

  // One row per (name, title): name, entity_title, link_count, total_count.
  std::string to_tsv() const {
    std::ostringstream out;
    for (const auto& [name, e] : names_) {
      for (const auto& [title, count] : e.links) {
        out << name << '\t' << title << '\t' << count << '\t' << e.total_count << '\n';
      }
    }
    return out.str();
  }

  static EntityDictionary from_tsv(const std::string& text) {
    EntityDictionary dict;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::vector<std::string> cols;
      std::size_t pos = 0;
      while (true) {
        auto tab = line.find('\t', pos);
        cols.push_back(line.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
        if (tab == std::string::npos) break;
        pos = tab + 1;
      }
      if (cols.size() != 4) {
        throw IngestError(lineno, "dictionary row needs 4 tab-separated columns");
      }
      std::uint64_t link = 0, total = 0;
      try {
        std::size_t used = 0;
        link = std::stoull(cols[2], &used);
        if (used != cols[2].size()) throw std::invalid_argument("link_count");
        total = std::stoull(cols[3], &used);
        if (used != cols[3].size()) throw std::invalid_argument("total_count");
      } catch (const std::exception&) {
        throw IngestError(lineno, "dictionary counts must be non-negative integers");
      }
      NameEntry& e = dict.names_[cols[0]];
      if (e.links.count(cols[1])) throw IngestError(lineno, "duplicate (name, title) row");
      if (!e.links.empty() && e.total_count != total) {
        throw IngestError(lineno, "inconsistent total_count for name '" + cols[0] + "'");
      }
      e.links[cols[1]] = link;
      e.total_count = total;
      if (e.link_count() > e.total_count) {
        throw IngestError(lineno, "link_count exceeds total_count for name '" + cols[0] + "'");
      }
    }
    return dict;
  }

 private:
  std::map<std::string, NameEntry> names_;
};

// link counts come from annotations; total_count counts non-overlapping
// occurrences of the name's word sequence. Linked occurrences are counted
// first, then unlinked matches that do not overlap an already counted
// occurrence of the same name are added left to right.
inline EntityDictionary build_dictionary(const std::vector<AnnotatedDocument>& docs) {
  EntityDictionary dict;
  std::set<std::size_t> lengths;
  for (const auto& doc : docs) {
    for (const auto& a : doc.annotations) {
      auto name = join_words(doc.words.begin() + a.start, doc.words.begin() + a.end);
      ++dict.entry(name).links[a.title];
      lengths.insert(static_cast<std::size_t>(a.end - a.start));
    }
  }
  for (const auto& doc : docs) {
    std::vector<std::string> norm;
    norm.reserve(doc.words.size());
    for (const auto& w : doc.words) norm.push_back(normalize_word(w));
    // name -> occupied spans in this document
    std::unordered_map<std::string, std::vector<std::pair<int, int>>> taken;
    for (const auto& a : doc.annotations) {
      auto name = join_words(doc.words.begin() + a.start, doc.words.begin() + a.end);
      taken[name].push_back({a.start, a.end});
      ++dict.entry(name).total_count;
    }
    const int n = static_cast<int>(norm.size());
    for (int i = 0; i < n; ++i) {
      std::string key;
      std::size_t len = 0;
      for (std::size_t want : lengths) {
        if (i + static_cast<int>(want) > n) break;
        while (len < want) {
          if (!key.empty()) key.push_back(' ');
          key += norm[i + len];
          ++len;
        }
        if (!dict.find(key)) continue;
        auto& spans = taken[key];
        const int s = i, e = i + static_cast<int>(want);
        bool overlaps = std::any_of(spans.begin(), spans.end(), [s, e](const auto& sp) {
          return sp.first < e && s < sp.second;
        });
        if (overlaps) continue;
        spans.push_back({s, e});
        ++dict.entry(key).total_count;
      }
    }
  }
  return dict;
}

// Surface name -> referent titles, from the hyperlinks on one source page.
using PageMapping = std::map<std::string, std::set<std::string>>;

inline void add_page_link(PageMapping& page, const std::vector<std::string>& anchor_words,
                          const std::string& title) {
  page[join_words(anchor_words.begin(), anchor_words.end())].insert(title);
}

// Every exact match of a page name becomes an annotation, provided the name
// has a single referent on the page and a link probability of at least
// `threshold`. Overlaps are resolved longest match first, then leftmost.
inline std::vector<Annotation> annotate(const std::vector<std::string>& words,
                                        const PageMapping& page, const EntityDictionary& dict,
                                        double threshold) {
  std::size_t max_len = 0;
  for (const auto& [name, _] : page) {
    max_len = std::max<std::size_t>(max_len, 1 + std::count(name.begin(), name.end(), ' '));
  }
  std::vector<Annotation> candidates;
  const int n = static_cast<int>(words.size());
  for (int i = 0; i < n; ++i) {
    std::string key;
    for (int len = 1; len <= static_cast<int>(max_len) && i + len <= n; ++len) {
      if (len > 1) key.push_back(' ');
      key += normalize_word(words[i + len - 1]);
      auto it = page.find(key);
      if (it == page.end() || it->second.size() != 1) continue;
      if (dict.link_probability(key) < threshold) continue;
      candidates.push_back({*it->second.begin(), i, i + len});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Annotation& a, const Annotation& b) {
    const int la = a.end - a.start, lb = b.end - b.start;
    return la != lb ? la > lb : a.start < b.start;
  });
  std::vector<Annotation> accepted;
  for (const auto& c : candidates) {
    bool clash = std::any_of(accepted.begin(), accepted.end(), [&c](const Annotation& a) {
      return a.start < c.end && c.start < a.end;
    });
    if (!clash) accepted.push_back(c);
  }
  std::sort(accepted.begin(), accepted.end(),
            [](const Annotation& a, const Annotation& b) { return a.start < b.start; });
  return accepted;
}

struct AnnotatedPair {
  std::vector<Annotation> question;
  std::vector<Annotation> passage;
};

inline AnnotatedPair annotate(const std::vector<std::string>& question_words,
                              const std::vector<std::string>& passage_words,
                              const PageMapping& page, const EntityDictionary& dict,
                              double threshold) {
  return {annotate(question_words, page, dict, threshold),
          annotate(passage_words, page, dict, threshold)};
}

}  // namespace luke::corpus

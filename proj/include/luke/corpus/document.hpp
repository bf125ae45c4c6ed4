// Entity-annotated documents and the JSON-lines corpus reader.
//
// One document per line:
//   {"id": "...", "words": ["..."], "entities": [{"title": "...", "start": 0, "end": 2}]}
// with `end` exclusive.
#pragma once

#include <algorithm>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "luke/io.hpp"
#include "luke/numerics/tensor.hpp"

namespace luke::corpus {

struct Annotation {
  std::string title;
  int start = 0;
  int end = 0;  // exclusive

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct AnnotatedDocument {
  std::string id;
  std::vector<std::string> words;
  std::vector<Annotation> annotations;
};

class IngestError : public ValidationError {
 public:
  IngestError(std::size_t line, const std::string& what)
      : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Checks bounds, sorts by start, and rejects overlaps. Throws ValidationError
// naming the document.
inline void validate_annotations(AnnotatedDocument& doc) {
  const int n = static_cast<int>(doc.words.size());
  for (const auto& a : doc.annotations) {
    if (a.start < 0 || a.start >= a.end || a.end > n) {
      throw ValidationError("document '" + doc.id + "': annotation '" + a.title + "' span [" +
                            std::to_string(a.start) + ", " + std::to_string(a.end) +
                            ") out of range for " + std::to_string(n) + " words");
    }
  }
  std::stable_sort(doc.annotations.begin(), doc.annotations.end(),
                   [](const Annotation& a, const Annotation& b) { return a.start < b.start; });
  for (std::size_t i = 1; i < doc.annotations.size(); ++i) {
    if (doc.annotations[i].start < doc.annotations[i - 1].end) {
      throw ValidationError("document '" + doc.id + "': overlapping annotations '" +
                            doc.annotations[i - 1].title + "' and '" +
                            doc.annotations[i].title + "'");
    }
  }
}

inline AnnotatedDocument parse_document(const nlohmann::json& j) {
  AnnotatedDocument doc;
  doc.id = j.at("id").get<std::string>();
  doc.words = j.at("words").get<std::vector<std::string>>();
  if (j.contains("entities")) {
    for (const auto& e : j.at("entities")) {
      doc.annotations.push_back(
          {e.at("title").get<std::string>(), e.at("start").get<int>(), e.at("end").get<int>()});
    }
  }
  validate_annotations(doc);
  return doc;
}

inline nlohmann::json to_json(const AnnotatedDocument& doc) {
  nlohmann::json entities = nlohmann::json::array();
  for (const auto& a : doc.annotations) {
    entities.push_back({{"title", a.title}, {"start", a.start}, {"end", a.end}});
  }
  return {{"id", doc.id}, {"words", doc.words}, {"entities", entities}};
}

// Streams documents from a JSON-lines file. Blank lines are skipped; any
// malformed or invalid line raises IngestError with its 1-based line number.
inline void for_each_document(const std::string& path,
                              const std::function<void(AnnotatedDocument&&)>& sink) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    AnnotatedDocument doc;
    try {
      doc = parse_document(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw IngestError(lineno, std::string("malformed document: ") + e.what());
    } catch (const ValidationError& e) {
      throw IngestError(lineno, e.what());
    }
    sink(std::move(doc));
  }
}

inline std::vector<AnnotatedDocument> ingest(const std::string& path) {
  std::vector<AnnotatedDocument> docs;
  for_each_document(path, [&docs](AnnotatedDocument&& d) { docs.push_back(std::move(d)); });
  return docs;
}

inline void write_documents(const std::string& path, const std::vector<AnnotatedDocument>& docs) {
  std::string out;
  for (const auto& d : docs) out += to_json(d).dump() + "\n";
  write_file_atomic(path, out);
}

}  // namespace luke::corpus

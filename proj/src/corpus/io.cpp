#include "vmsst/corpus/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "vmsst/numcore/errors.hpp"

namespace vmsst::corpus {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    return out;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        parts.push_back(line.substr(start, pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return parts;
}

std::string join(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

class LineReader {
public:
    explicit LineReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw FormatError("cannot open " + path.string());
    }

    bool next(std::vector<std::string>& fields) {
        std::string line;
        while (std::getline(in_, line)) {
            ++line_no_;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            fields = split(line, '\t');
            return true;
        }
        return false;
    }

    [[noreturn]] void fail(const std::string& why) const {
        throw FormatError(path_.string() + ":" + std::to_string(line_no_) + ": " + why);
    }

    template <typename Number>
    Number number(const std::string& field, const char* what) const {
        Number v{};
        auto res = std::from_chars(field.data(), field.data() + field.size(), v);
        if (res.ec != std::errc() || res.ptr != field.data() + field.size()) fail(std::string("bad ") + what + " '" + field + "'");
        return v;
    }

    std::vector<std::string> tokens(const std::string& field) const {
        if (field.empty()) return {};
        auto t = split(field, ' ');
        for (const auto& s : t) {
            if (s.empty()) fail("empty token (double space)");
        }
        return t;
    }

private:
    std::filesystem::path path_;
    std::ifstream in_;
    std::size_t line_no_ = 0;
};

}  // namespace

void write_pairs(const std::filesystem::path& path, const std::vector<ParallelPair>& pairs) {
    auto out = open_out(path);
    for (const auto& p : pairs) {
        out << p.a.language << '\t' << join(p.a.tokens) << '\t' << p.b.language << '\t' << join(p.b.tokens);
        if (p.gold_similarity) out << '\t' << format_double(*p.gold_similarity);
        out << '\n';
    }
}

std::vector<ParallelPair> read_pairs(const std::filesystem::path& path) {
    LineReader in(path);
    std::vector<ParallelPair> pairs;
    std::vector<std::string> f;
    while (in.next(f)) {
        if (f.size() != 4 && f.size() != 5) in.fail("expected 4 or 5 tab-separated fields");
        ParallelPair p;
        p.a = {in.number<std::int32_t>(f[0], "language"), in.tokens(f[1])};
        p.b = {in.number<std::int32_t>(f[2], "language"), in.tokens(f[3])};
        if (f.size() == 5) p.gold_similarity = in.number<double>(f[4], "gold similarity");
        pairs.push_back(std::move(p));
    }
    return pairs;
}

void write_sentences(const std::filesystem::path& path, const std::vector<Sentence>& sentences,
                     const std::vector<std::size_t>* gold) {
    if (gold && gold->size() != sentences.size()) throw ContractError("write_sentences: one gold index per sentence");
    auto out = open_out(path);
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        out << sentences[i].language << '\t' << join(sentences[i].tokens);
        if (gold) out << '\t' << (*gold)[i];
        out << '\n';
    }
}

SentenceFile read_sentences(const std::filesystem::path& path) {
    LineReader in(path);
    SentenceFile file;
    std::vector<std::string> f;
    std::optional<std::size_t> width;
    while (in.next(f)) {
        if (f.size() != 2 && f.size() != 3) in.fail("expected 2 or 3 tab-separated fields");
        if (width && *width != f.size()) in.fail("inconsistent column count");
        width = f.size();
        file.sentences.push_back({in.number<std::int32_t>(f[0], "language"), in.tokens(f[1])});
        if (f.size() == 3) {
            if (!file.gold) file.gold.emplace();
            file.gold->push_back(in.number<std::size_t>(f[2], "gold index"));
        }
    }
    return file;
}

void write_alignments(const std::filesystem::path& path, const std::vector<std::pair<std::size_t, std::size_t>>& gold) {
    auto out = open_out(path);
    for (const auto& [s, t] : gold) out << s << '\t' << t << '\n';
}

std::vector<std::pair<std::size_t, std::size_t>> read_alignments(const std::filesystem::path& path) {
    LineReader in(path);
    std::vector<std::pair<std::size_t, std::size_t>> gold;
    std::vector<std::string> f;
    while (in.next(f)) {
        if (f.size() != 2) in.fail("expected source_index<TAB>target_index");
        gold.emplace_back(in.number<std::size_t>(f[0], "index"), in.number<std::size_t>(f[1], "index"));
    }
    return gold;
}

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest{{"format", "vmsst-corpus-1"},
                            {"seed", corpus.spec.seed},
                            {"spec", corpus.spec},
                            {"counts",
                             {{"train", corpus.train.size()},
                              {"sts_monolingual", corpus.sts_monolingual.size()},
                              {"sts_crosslingual", corpus.sts_crosslingual.size()},
                              {"tatoeba", corpus.tatoeba.size()},
                              {"mining_source", corpus.mining.source.size()},
                              {"mining_target", corpus.mining.target.size()},
                              {"retrieval_kb", corpus.retrieval.kb.size()}}}};
    open_out(dir / files::manifest) << manifest.dump(2) << '\n';
    write_vocabulary(corpus.vocab, dir / files::vocabulary);
    write_pairs(dir / files::train, corpus.train);
    write_pairs(dir / files::sts_monolingual, corpus.sts_monolingual);
    write_pairs(dir / files::sts_crosslingual, corpus.sts_crosslingual);
    write_pairs(dir / files::tatoeba, corpus.tatoeba);
    write_sentences(dir / files::mining_source, corpus.mining.source);
    write_sentences(dir / files::mining_target, corpus.mining.target);
    write_alignments(dir / files::mining_gold, corpus.mining.gold);
    write_sentences(dir / files::retrieval_kb, corpus.retrieval.kb);
    write_sentences(dir / files::retrieval_primary, corpus.retrieval.primary.queries, &corpus.retrieval.primary.gold);
    write_sentences(dir / files::retrieval_multilingual, corpus.retrieval.multilingual.queries,
                    &corpus.retrieval.multilingual.gold);
}

namespace {

QuerySet read_queries(const std::filesystem::path& path) {
    auto file = read_sentences(path);
    if (!file.gold && !file.sentences.empty()) throw FormatError(path.string() + ": query file lacks gold indices");
    return {std::move(file.sentences), file.gold.value_or(std::vector<std::size_t>{})};
}

}  // namespace

Corpus read_corpus(const std::filesystem::path& dir) {
    const auto manifest_path = dir / files::manifest;
    std::ifstream in(manifest_path, std::ios::binary);
    if (!in) throw FormatError("missing corpus manifest " + manifest_path.string());
    Corpus corpus;
    try {
        corpus.spec = nlohmann::json::parse(in).at("spec").get<CorpusSpec>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    }
    corpus.vocab = read_vocabulary(dir / files::vocabulary);
    corpus.languages = build_languages(corpus.spec, corpus.vocab);
    corpus.train = read_pairs(dir / files::train);
    corpus.sts_monolingual = read_pairs(dir / files::sts_monolingual);
    corpus.sts_crosslingual = read_pairs(dir / files::sts_crosslingual);
    corpus.tatoeba = read_pairs(dir / files::tatoeba);
    corpus.mining.source = read_sentences(dir / files::mining_source).sentences;
    corpus.mining.target = read_sentences(dir / files::mining_target).sentences;
    corpus.mining.gold = read_alignments(dir / files::mining_gold);
    corpus.retrieval.kb = read_sentences(dir / files::retrieval_kb).sentences;
    corpus.retrieval.primary = read_queries(dir / files::retrieval_primary);
    corpus.retrieval.multilingual = read_queries(dir / files::retrieval_multilingual);
    return corpus;
}

}  // namespace vmsst::corpus

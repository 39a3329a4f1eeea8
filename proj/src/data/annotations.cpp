#include "sattag/data.hpp"
#include "sattag/errors.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace sattag {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace

const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Valid: return "valid";
        case Split::Test: return "test";
    }
    return "?";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::Train;
    if (name == "valid") return Split::Valid;
    if (name == "test") return Split::Test;
    throw ConfigError("unknown split '" + name + "' (expected train, valid or test)");
}

std::vector<Clip> ClipTable::in_split(Split s) const {
    std::vector<Clip> out;
    for (const Clip& c : clips) {
        if (c.split == s) out.push_back(c);
    }
    return out;
}

ClipTable load_annotations(const std::filesystem::path& csv_path, const std::filesystem::path& audio_root) {
    std::ifstream in(csv_path);
    if (!in) throw IoError("cannot open annotation file: " + csv_path.string());
    const auto fail = [&](std::size_t line_no, const std::string& why) {
        return DataError(csv_path.string() + ":" + std::to_string(line_no) + ": " + why);
    };

    std::string line;
    if (!std::getline(in, line)) throw fail(1, "empty file, expected a header row");
    const auto header = split_csv_line(line);
    if (header.size() < 3 || header[0] != "clip_id" || header[1] != "path") {
        throw fail(1, "header must be clip_id,path,<tag>,...");
    }
    ClipTable table;
    table.tag_names.assign(header.begin() + 2, header.end());
    table.tag_counts.assign(table.n_tags(), 0);

    std::unordered_set<std::string> seen;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) {
            throw fail(line_no, "expected " + std::to_string(header.size()) + " cells, found " + std::to_string(cells.size()));
        }
        if (cells[0].empty()) throw fail(line_no, "empty clip_id");
        if (!seen.insert(cells[0]).second) throw fail(line_no, "duplicate clip_id '" + cells[0] + "'");
        Clip clip;
        clip.id = cells[0];
        const std::filesystem::path p(cells[1]);
        clip.audio_path = p.is_absolute() ? p : audio_root / p;
        clip.tags.resize(table.n_tags());
        bool any = false;
        for (std::size_t t = 0; t < table.n_tags(); ++t) {
            const std::string& v = cells[t + 2];
            if (v == "1") {
                clip.tags[t] = 1.0;
                any = true;
            } else if (v != "0") {
                throw fail(line_no, "tag '" + table.tag_names[t] + "' must be 0 or 1, found '" + v + "'");
            }
        }
        if (!any) {
            ++table.dropped_untagged;
            continue;
        }
        for (std::size_t t = 0; t < table.n_tags(); ++t) table.tag_counts[t] += clip.tags[t] > 0.5 ? 1 : 0;
        if (!std::filesystem::exists(clip.audio_path)) table.missing_audio.push_back(clip.id);
        table.clips.push_back(std::move(clip));
    }
    return table;
}

Split hash_split(const std::string& id) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : id) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    const auto bucket = h % 10;
    if (bucket < 8) return Split::Train;
    return bucket == 8 ? Split::Valid : Split::Test;
}

std::vector<std::string> read_id_list(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open split list: " + path.string());
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (!line.empty()) ids.push_back(line);
    }
    return ids;
}

void assign_splits(ClipTable& table, const std::optional<SplitLists>& lists) {
    if (!lists) {
        for (Clip& c : table.clips) c.split = hash_split(c.id);
        return;
    }
    std::unordered_map<std::string, Split> where;
    const auto add = [&](const std::vector<std::string>& ids, Split s) {
        for (const auto& id : ids) {
            const auto [it, inserted] = where.emplace(id, s);
            if (!inserted && it->second != s) {
                throw DataError("clip '" + id + "' listed in both " + split_name(it->second) + " and " + split_name(s));
            }
        }
    };
    add(lists->train, Split::Train);
    add(lists->valid, Split::Valid);
    add(lists->test, Split::Test);
    std::vector<Clip> kept;
    kept.reserve(table.clips.size());
    for (Clip& c : table.clips) {
        const auto it = where.find(c.id);
        if (it == where.end()) continue;
        c.split = it->second;
        kept.push_back(std::move(c));
    }
    table.clips = std::move(kept);
}

}  // namespace sattag

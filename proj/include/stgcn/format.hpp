#ifndef STGCN_FORMAT_HPP
#define STGCN_FORMAT_HPP

#include <cstdio>
#include <string>
#include <vector>

namespace stgcn {

/// Round-trippable decimal form of a double (17 significant digits).
inline std::string format_double(double value) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.17g", value);
    return buffer;
}

/// Splits one CSV line on commas; no quoting (station ids and numbers only).
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    if (!fields.empty() && !fields.back().empty() && fields.back().back() == '\r') {
        fields.back().pop_back();
    }
    return fields;
}

} // namespace stgcn

#endif

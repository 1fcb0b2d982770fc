#include "smmr/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "smmr/errors.hpp"

namespace smmr {

using nlohmann::json;

std::string_view to_string(TableLayout layout) {
    return layout == TableLayout::daic ? "daic" : "case_study";
}

TableLayout table_layout_from_string(std::string_view s) {
    if (s == "daic") return TableLayout::daic;
    if (s == "case_study") return TableLayout::case_study;
    throw DomainError("unknown table layout '" + std::string(s) + "'");
}

TableLayout layout_for_task(Task task) {
    switch (task) {
    case Task::phq8_regression:
    case Task::binary:
        return TableLayout::daic;
    case Task::concern:
    case Task::disorders:
        return TableLayout::case_study;
    }
    return TableLayout::daic;
}

std::vector<std::string> layout_columns(TableLayout layout) {
    if (layout == TableLayout::daic) {
        return {"Acc", "F1", "MF1", "MPrec", "MRec", "ROC AUC", "MAE", "RMSE"};
    }
    return {"Valid (%)", "Acc", "F1", "Ave", "SD"};
}

TableRow row_from_metrics(TableLayout layout, const std::string& label,
                          const MetricsReport& m) {
    TableRow row;
    row.label = label;
    if (layout == TableLayout::daic) {
        row.cells = {m.accuracy, m.f1, m.macro_f1, m.macro_precision,
                     m.macro_recall, m.roc_auc, m.mae, m.rmse};
    } else {
        row.cells = {m.valid_rate_pct, m.accuracy, m.f1, m.disorder_ave, m.disorder_sd};
    }
    return row;
}

namespace {

// Column 0 of the case_study layout is Valid (%): integer, half away from
// zero. In delta rows the same column formats with an explicit sign.
bool is_integer_column(TableLayout layout, size_t col) {
    return layout == TableLayout::case_study && col == 0;
}

// Lower values win for error-style columns.
bool lower_is_better(TableLayout layout, size_t col) {
    if (layout == TableLayout::daic) return col == 6 || col == 7; // MAE, RMSE
    return col == 4;                                              // SD
}

long long round_half_away(double v) {
    return static_cast<long long>(v >= 0 ? std::floor(v + 0.5) : std::ceil(v - 0.5));
}

std::string format_cell(std::optional<double> value, TableLayout layout, size_t col,
                        bool as_delta) {
    if (!value) return "--";
    char buf[64];
    if (is_integer_column(layout, col)) {
        std::snprintf(buf, sizeof buf, as_delta ? "%+lld" : "%lld", round_half_away(*value));
    } else {
        std::snprintf(buf, sizeof buf, as_delta ? "%+.2f" : "%.2f", *value);
    }
    return buf;
}

} // namespace

std::string render_table(TableLayout layout, const std::vector<TableRow>& rows,
                         const RenderOptions& options) {
    std::vector<std::string> columns = layout_columns(layout);
    for (const TableRow& row : rows) {
        if (row.cells.size() != columns.size()) {
            throw DomainError("render_table: row '" + row.label + "' has " +
                              std::to_string(row.cells.size()) + " cells, layout needs " +
                              std::to_string(columns.size()));
        }
    }

    // Which cell carries the best defined value per column (ties all marked).
    std::vector<std::vector<bool>> best(rows.size(),
                                        std::vector<bool>(columns.size(), false));
    if (options.highlight_best && rows.size() >= 2) {
        for (size_t c = 0; c < columns.size(); ++c) {
            std::optional<double> best_value;
            for (const TableRow& row : rows) {
                if (!row.cells[c]) continue;
                if (!best_value || (lower_is_better(layout, c) ? *row.cells[c] < *best_value
                                                               : *row.cells[c] > *best_value)) {
                    best_value = *row.cells[c];
                }
            }
            if (!best_value) continue;
            for (size_t r = 0; r < rows.size(); ++r) {
                if (rows[r].cells[c] && *rows[r].cells[c] == *best_value) best[r][c] = true;
            }
        }
    }

    std::vector<std::vector<std::string>> body;
    std::vector<std::string> labels;
    for (size_t r = 0; r < rows.size(); ++r) {
        std::vector<std::string> cells;
        for (size_t c = 0; c < columns.size(); ++c) {
            std::string text = format_cell(rows[r].cells[c], layout, c, false);
            if (best[r][c]) text += '*';
            cells.push_back(std::move(text));
        }
        body.push_back(std::move(cells));
        labels.push_back(rows[r].label);
    }

    if (options.delta_row && rows.size() == 2) {
        std::vector<std::string> cells;
        for (size_t c = 0; c < columns.size(); ++c) {
            std::optional<double> delta;
            if (rows[0].cells[c] && rows[1].cells[c]) {
                if (is_integer_column(layout, c)) {
                    delta = static_cast<double>(round_half_away(*rows[1].cells[c]) -
                                                round_half_away(*rows[0].cells[c]));
                } else {
                    delta = *rows[1].cells[c] - *rows[0].cells[c];
                }
            }
            cells.push_back(format_cell(delta, layout, c, true));
        }
        body.push_back(std::move(cells));
        labels.push_back("Delta");
    }

    size_t label_width = std::string("Model").size();
    for (const std::string& label : labels) label_width = std::max(label_width, label.size());
    std::vector<size_t> widths(columns.size());
    for (size_t c = 0; c < columns.size(); ++c) {
        widths[c] = columns[c].size();
        for (const auto& cells : body) widths[c] = std::max(widths[c], cells[c].size());
    }

    std::string out = "Model";
    out.append(label_width - 5, ' ');
    for (size_t c = 0; c < columns.size(); ++c) {
        out += "  ";
        out.append(widths[c] - columns[c].size(), ' ');
        out += columns[c];
    }
    out += '\n';
    for (size_t r = 0; r < body.size(); ++r) {
        out += labels[r];
        out.append(label_width - labels[r].size(), ' ');
        for (size_t c = 0; c < columns.size(); ++c) {
            out += "  ";
            out.append(widths[c] - body[r][c].size(), ' ');
            out += body[r][c];
        }
        out += '\n';
    }
    return out;
}

PrebakedTable parse_prebaked_table(const std::string& json_text,
                                   const std::string& source_name) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const std::exception& e) {
        throw IngestError(source_name + ": invalid JSON: " + e.what());
    }
    if (!doc.is_object() || !doc.contains("layout") || !doc["layout"].is_string() ||
        !doc.contains("rows") || !doc["rows"].is_array()) {
        throw IngestError(source_name + ": expected {layout, rows}");
    }

    PrebakedTable table;
    try {
        table.layout = table_layout_from_string(doc["layout"].get<std::string>());
    } catch (const DomainError& e) {
        throw IngestError(source_name + ": " + e.what());
    }

    std::vector<std::string> keys;
    if (table.layout == TableLayout::daic) {
        keys = {"acc", "f1", "mf1", "mprec", "mrec", "roc_auc", "mae", "rmse"};
    } else {
        keys = {"valid", "acc", "f1", "ave", "sd"};
    }

    size_t idx = 0;
    for (const json& row_json : doc["rows"]) {
        std::string where = source_name + ": rows[" + std::to_string(idx++) + "]";
        if (!row_json.is_object() || !row_json.contains("label") ||
            !row_json["label"].is_string() || !row_json.contains("metrics") ||
            !row_json["metrics"].is_object()) {
            throw IngestError(where + ": expected {label, metrics}");
        }
        const json& metrics = row_json["metrics"];
        for (auto it = metrics.begin(); it != metrics.end(); ++it) {
            if (std::find(keys.begin(), keys.end(), it.key()) == keys.end()) {
                throw IngestError(where + ": unknown metric key '" + it.key() + "'");
            }
            if (!it.value().is_number()) {
                throw IngestError(where + ": metric '" + it.key() + "' must be a number");
            }
        }
        TableRow row;
        row.label = row_json["label"].get<std::string>();
        for (const std::string& key : keys) {
            if (metrics.contains(key)) {
                row.cells.push_back(metrics[key].get<double>());
            } else {
                row.cells.push_back(std::nullopt);
            }
        }
        table.rows.push_back(std::move(row));
    }
    if (table.rows.empty()) throw IngestError(source_name + ": no rows");
    return table;
}

} // namespace smmr

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "smmr/metrics.hpp"
#include "smmr/types.hpp"

namespace smmr {

// Two table shapes: interview-style runs report
//   Acc, F1, MF1, MPrec, MRec, ROC AUC, MAE, RMSE
// and case-study runs report
//   Valid (%), Acc, F1, Ave, SD.
enum class TableLayout { daic, case_study };

std::string_view to_string(TableLayout layout);
TableLayout table_layout_from_string(std::string_view s);
TableLayout layout_for_task(Task task);

std::vector<std::string> layout_columns(TableLayout layout);

struct TableRow {
    std::string label;
    std::vector<std::optional<double>> cells; // one per layout column
};

TableRow row_from_metrics(TableLayout layout, const std::string& label,
                          const MetricsReport& metrics);

struct RenderOptions {
    bool highlight_best = false; // append '*' to the best value per column
    bool delta_row = false;      // with exactly two rows, append their difference
};

// Plain-text table. Undefined cells render as "--"; Valid (%) rounds half
// away from zero to an integer, every other column keeps two decimals.
std::string render_table(TableLayout layout, const std::vector<TableRow>& rows,
                         const RenderOptions& options = {});

struct PrebakedTable {
    TableLayout layout = TableLayout::daic;
    std::vector<TableRow> rows;
};

// Stored-numbers input for comparison rendering: JSON {"layout", "rows":
// [{"label", "metrics": {<column key>: value}}]}. Column keys are acc, f1,
// mf1, mprec, mrec, roc_auc, mae, rmse for the daic layout and valid, acc,
// f1, ave, sd for case_study.
PrebakedTable parse_prebaked_table(const std::string& json_text,
                                   const std::string& source_name);

} // namespace smmr

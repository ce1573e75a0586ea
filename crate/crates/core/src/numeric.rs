/// Sum that does not depend on the order of `values` (sorted before adding).
pub(crate) fn order_independent_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

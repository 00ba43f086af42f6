use crate::numcore::kernels::log_softmax;
use crate::seqcoder::{EOS, UNK};
use crate::{Error, Result};

/// Mean per-token negative log-likelihood of `target` followed by EOS under
/// row-major `logits` (`|target| + 1` rows of `vocab` values).
pub fn nll_loss(logits: &[f64], vocab: usize, target: &[u32]) -> Result<f64> {
    if vocab == 0 || !logits.len().is_multiple_of(vocab) {
        return Err(Error::Shape(format!("{} logits for a vocabulary of {vocab}", logits.len())));
    }
    let rows = logits.len() / vocab;
    if rows != target.len() + 1 {
        return Err(Error::Shape(format!("{rows} logit rows for a target of {} tokens plus EOS", target.len())));
    }
    let mut total = 0.0;
    for (row, &t) in logits.chunks(vocab).zip(target.iter().chain(std::iter::once(&EOS))) {
        let t = if (t as usize) < vocab { t } else { UNK };
        total -= log_softmax(row)[t as usize];
    }
    Ok(total / rows as f64)
}

//! Brute-force BM25, written without reference to the library's index.
//! Every statistic is recomputed from the raw bodies on each call.

pub fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// `(alias, score)` for every document, sorted by score descending then
/// alias ascending.
pub fn rank(docs: &[(String, String)], query: &str) -> Vec<(String, f64)> {
    let k1 = 1.2_f64;
    let b = 0.75_f64;
    let toks: Vec<Vec<String>> = docs.iter().map(|(_, body)| tokens(body)).collect();
    let n = docs.len() as f64;
    let avgdl = if docs.is_empty() {
        0.0
    } else {
        toks.iter().map(Vec::len).sum::<usize>() as f64 / n
    };
    let mut q = tokens(query);
    q.sort();
    q.dedup();

    let mut out: Vec<(String, f64)> = Vec::new();
    for (i, (alias, _)) in docs.iter().enumerate() {
        let dl = toks[i].len() as f64;
        let mut score = 0.0;
        for term in &q {
            let tf = toks[i].iter().filter(|t| *t == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = toks.iter().filter(|d| d.contains(term)).count() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            let denom = tf + k1 * (1.0 - b + b * dl / avgdl);
            score += idf * (tf * (k1 + 1.0)) / denom;
        }
        out.push((alias.clone(), score));
    }
    out.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    out
}

//! Porter stemmer (the classic 1980 algorithm), used to normalize candidate
//! tokens so surface variants ("Checks", "checking") collapse to one stem.
//!
//! Operates on lowercase ASCII; anything else passes through unchanged.
//! Words of length <= 2 are left alone.

/// Stem a lowercase word.
pub fn porter_stem(word: &str) -> String {
    if word.len() <= 2 || !word.bytes().all(|b| b.is_ascii_lowercase()) {
        return word.to_string();
    }
    let mut w = word.as_bytes().to_vec();
    step_1a(&mut w);
    step_1b(&mut w);
    step_1c(&mut w);
    step_2(&mut w);
    step_3(&mut w);
    step_4(&mut w);
    step_5a(&mut w);
    step_5b(&mut w);
    String::from_utf8(w).expect("ascii")
}

fn is_cons(w: &[u8], i: usize) -> bool {
    match w[i] {
        b'a' | b'e' | b'i' | b'o' | b'u' => false,
        b'y' => i == 0 || !is_cons(w, i - 1),
        _ => true,
    }
}

/// Number of VC sequences in the [C](VC)^m[V] form.
fn measure(w: &[u8]) -> usize {
    let n = w.len();
    let mut m = 0;
    let mut i = 0;
    while i < n && is_cons(w, i) {
        i += 1;
    }
    loop {
        while i < n && !is_cons(w, i) {
            i += 1;
        }
        if i >= n {
            return m;
        }
        m += 1;
        while i < n && is_cons(w, i) {
            i += 1;
        }
        if i >= n {
            return m;
        }
    }
}

fn has_vowel(w: &[u8]) -> bool {
    (0..w.len()).any(|i| !is_cons(w, i))
}

fn ends_double_cons(w: &[u8]) -> bool {
    let n = w.len();
    n >= 2 && w[n - 1] == w[n - 2] && is_cons(w, n - 1)
}

/// *o: stem ends consonant-vowel-consonant where the final consonant is not
/// w, x or y.
fn ends_cvc(w: &[u8]) -> bool {
    let n = w.len();
    n >= 3
        && is_cons(w, n - 3)
        && !is_cons(w, n - 2)
        && is_cons(w, n - 1)
        && !matches!(w[n - 1], b'w' | b'x' | b'y')
}

fn ends_with(w: &[u8], suffix: &str) -> bool {
    w.ends_with(suffix.as_bytes())
}

fn stem_len(w: &[u8], suffix: &str) -> usize {
    w.len() - suffix.len()
}

/// Replace `suffix` with `replacement` when the stem measure condition holds.
/// Returns true when the suffix matched (whether or not it was replaced),
/// since each step applies only its longest matching suffix.
fn try_rule(w: &mut Vec<u8>, suffix: &str, replacement: &str, min_m: usize) -> bool {
    if !ends_with(w, suffix) {
        return false;
    }
    let sl = stem_len(w, suffix);
    if measure(&w[..sl]) >= min_m {
        w.truncate(sl);
        w.extend_from_slice(replacement.as_bytes());
    }
    true
}

fn step_1a(w: &mut Vec<u8>) {
    if ends_with(w, "sses") || ends_with(w, "ies") {
        w.truncate(w.len() - 2);
    } else if !ends_with(w, "ss") && ends_with(w, "s") {
        w.truncate(w.len() - 1);
    }
}

fn step_1b(w: &mut Vec<u8>) {
    if ends_with(w, "eed") {
        let sl = stem_len(w, "eed");
        if measure(&w[..sl]) > 0 {
            w.truncate(w.len() - 1);
        }
        return;
    }
    let removed = if ends_with(w, "ed") && has_vowel(&w[..stem_len(w, "ed")]) {
        w.truncate(stem_len(w, "ed"));
        true
    } else if ends_with(w, "ing") && has_vowel(&w[..stem_len(w, "ing")]) {
        w.truncate(stem_len(w, "ing"));
        true
    } else {
        false
    };
    if !removed {
        return;
    }
    if ends_with(w, "at") || ends_with(w, "bl") || ends_with(w, "iz") {
        w.push(b'e');
    } else if ends_double_cons(w) && !matches!(w[w.len() - 1], b'l' | b's' | b'z') {
        w.truncate(w.len() - 1);
    } else if measure(w) == 1 && ends_cvc(w) {
        w.push(b'e');
    }
}

#[allow(clippy::ptr_arg)] // uniform step signature
fn step_1c(w: &mut Vec<u8>) {
    if ends_with(w, "y") && has_vowel(&w[..w.len() - 1]) {
        let n = w.len();
        w[n - 1] = b'i';
    }
}

fn step_2(w: &mut Vec<u8>) {
    const RULES: &[(&str, &str)] = &[
        ("ational", "ate"),
        ("ization", "ize"),
        ("iveness", "ive"),
        ("fulness", "ful"),
        ("ousness", "ous"),
        ("tional", "tion"),
        ("biliti", "ble"),
        ("entli", "ent"),
        ("ousli", "ous"),
        ("alism", "al"),
        ("aliti", "al"),
        ("iviti", "ive"),
        ("ation", "ate"),
        ("enci", "ence"),
        ("anci", "ance"),
        ("izer", "ize"),
        ("abli", "able"),
        ("alli", "al"),
        ("ator", "ate"),
        ("eli", "e"),
    ];
    for (suffix, replacement) in RULES {
        if try_rule(w, suffix, replacement, 1) {
            return;
        }
    }
}

fn step_3(w: &mut Vec<u8>) {
    const RULES: &[(&str, &str)] = &[
        ("icate", "ic"),
        ("ative", ""),
        ("alize", "al"),
        ("iciti", "ic"),
        ("ical", "ic"),
        ("ness", ""),
        ("ful", ""),
    ];
    for (suffix, replacement) in RULES {
        if try_rule(w, suffix, replacement, 1) {
            return;
        }
    }
}

fn step_4(w: &mut Vec<u8>) {
    const SUFFIXES: &[&str] = &[
        "ement", "ance", "ence", "able", "ible", "ment", "ant", "ent", "ism", "ate", "iti", "ous",
        "ive", "ize", "ion", "al", "er", "ic", "ou",
    ];
    for suffix in SUFFIXES {
        if !ends_with(w, suffix) {
            continue;
        }
        let sl = stem_len(w, suffix);
        // `ion` additionally needs the stem to end in s or t.
        let applies = measure(&w[..sl]) > 1
            && (*suffix != "ion" || (sl >= 1 && matches!(w[sl - 1], b's' | b't')));
        if applies {
            w.truncate(sl);
        }
        return;
    }
}

fn step_5a(w: &mut Vec<u8>) {
    if !ends_with(w, "e") {
        return;
    }
    let sl = w.len() - 1;
    let m = measure(&w[..sl]);
    if m > 1 || (m == 1 && !ends_cvc(&w[..sl])) {
        w.truncate(sl);
    }
}

fn step_5b(w: &mut Vec<u8>) {
    if measure(w) > 1 && ends_double_cons(w) && w[w.len() - 1] == b'l' {
        w.truncate(w.len() - 1);
    }
}

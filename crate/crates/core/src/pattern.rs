//! Minimal glob matching for tensor names: `*` matches any run of characters
//! (including none), `?` matches exactly one. Whole-name, case-sensitive.

/// Iterative wildcard match with backtracking over the last `*`.
pub fn glob_match(pattern: &str, name: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let n: Vec<char> = name.chars().collect();
    let (mut pi, mut ni) = (0usize, 0usize);
    let mut star: Option<(usize, usize)> = None;

    while ni < n.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == n[ni]) {
            pi += 1;
            ni += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ni));
            pi += 1;
        } else if let Some((star_pi, star_ni)) = star {
            // Let the last * absorb one more character.
            pi = star_pi + 1;
            ni = star_ni + 1;
            star = Some((star_pi, star_ni + 1));
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == '*' {
        pi += 1;
    }
    pi == p.len()
}

pub fn any_match(patterns: &[String], name: &str) -> bool {
    patterns.iter().any(|p| glob_match(p, name))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_and_wildcards() {
        assert!(glob_match("w", "w"));
        assert!(!glob_match("w", "ww"));
        assert!(glob_match("*", ""));
        assert!(glob_match("*", "anything.at.all"));
        assert!(glob_match(
            "*.q_proj.weight",
            "model.layers.0.self_attn.q_proj.weight"
        ));
        assert!(!glob_match(
            "*.q_proj.weight",
            "model.layers.0.self_attn.k_proj.weight"
        ));
        assert!(glob_match("layer?.bias", "layer1.bias"));
        assert!(!glob_match("layer?.bias", "layer12.bias"));
        assert!(glob_match("a*b*c", "a-x-b-y-c"));
        assert!(!glob_match("a*b*c", "a-x-c"));
    }

    #[test]
    fn star_backtracking() {
        assert!(glob_match("*ab", "aab"));
        assert!(glob_match("a*ab", "aaab"));
        assert!(glob_match("*a*", "bab"));
        assert!(!glob_match("*abc*d", "ababc"));
    }

    #[test]
    fn any_of_list() {
        let patterns = vec!["*.q_proj.weight".to_string(), "*.v_proj.weight".to_string()];
        assert!(any_match(&patterns, "h.0.v_proj.weight"));
        assert!(!any_match(&patterns, "h.0.mlp.weight"));
        assert!(!any_match(&[], "anything"));
    }
}

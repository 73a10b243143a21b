//! Brute-force reference implementations, written from the definitions and
//! sharing no code with the library.

/// Kendall tau-b by enumerating every pair.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut concordant, mut discordant, mut tied_x, mut tied_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tied_x += 1;
            }
            if dy == 0.0 {
                tied_y += 1;
            }
            if dx == 0.0 || dy == 0.0 {
                continue;
            }
            if (dx > 0.0) == (dy > 0.0) {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    (concordant - discordant) as f64 / ((n0 - tied_x) as f64 * (n0 - tied_y) as f64).sqrt()
}

/// Average rank of each value: one plus the number of smaller values plus
/// half the number of other equal values.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|a| {
            let less = v.iter().filter(|b| *b < a).count() as f64;
            let equal = v.iter().filter(|b| *b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    sxy / (sxx * syy).sqrt()
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Binary tree shape; leaves are numbered left to right when printed.
#[derive(Debug, Clone)]
pub enum Shape {
    Leaf,
    Node(Box<Shape>, Box<Shape>),
}

pub fn all_shapes(leaves: usize) -> Vec<Shape> {
    if leaves == 1 {
        return vec![Shape::Leaf];
    }
    let mut out = Vec::new();
    for left in 1..leaves {
        for l in all_shapes(left) {
            for r in all_shapes(leaves - left) {
                out.push(Shape::Node(Box::new(l.clone()), Box::new(r.clone())));
            }
        }
    }
    out
}

pub fn bracketed(s: &Shape) -> String {
    fn go(s: &Shape, next: &mut usize, out: &mut String) {
        match s {
            Shape::Leaf => {
                out.push_str(&format!("(W w{next})"));
                *next += 1;
            }
            Shape::Node(l, r) => {
                out.push_str("(N ");
                go(l, next, out);
                out.push(' ');
                go(r, next, out);
                out.push(')');
            }
        }
    }
    let mut out = String::new();
    go(s, &mut 0, &mut out);
    out
}

/// Mean over leaves of the number of right siblings passed on the way
/// down. In a binary tree a left branch has one right sibling.
pub fn yngve(s: &Shape) -> f64 {
    fn go(s: &Shape, depth: usize, acc: &mut Vec<usize>) {
        match s {
            Shape::Leaf => acc.push(depth),
            Shape::Node(l, r) => {
                go(l, depth + 1, acc);
                go(r, depth, acc);
            }
        }
    }
    let mut acc = Vec::new();
    go(s, 0, &mut acc);
    acc.iter().sum::<usize>() as f64 / acc.len() as f64
}

/// P(yes) straight from the definition, no shifting.
pub fn yes_share(yes: &[f64], no: &[f64]) -> f64 {
    let y: f64 = yes.iter().map(|v| v.exp()).sum();
    let n: f64 = no.iter().map(|v| v.exp()).sum();
    y / (y + n)
}

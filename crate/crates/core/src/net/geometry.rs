//! Analytic geometry of a network: per-node grids, output sizes, the
//! equivariance period, the input margin and zero-padding contamination.
//!
//! All spatial quantities are per axis; kernels are square and strides
//! isotropic so the same numbers apply to width and height.
//!
//! Each node sits on a regular grid over input coordinates: its pixel `x`
//! is centred at input coordinate `(center2 / 2) + x * stride`. `center2`
//! is stored doubled because even kernels and upsampling put centres on
//! half pixels.

use super::{LayerKind, LayerNode, NetworkGraph};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeGeometry {
    /// Input pixels per node pixel.
    pub stride: usize,
    /// Twice the input coordinate of the centre of node pixel 0.
    pub center2: i64,
    /// Receptive field extent in input pixels.
    pub receptive_field: usize,
}

/// Half-open interval `[lo, hi)` of output coordinates; empty when `hi <= lo`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CleanInterval {
    pub lo: i64,
    pub hi: i64,
    pub size: usize,
}

impl CleanInterval {
    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }

    pub fn contains(&self, x: usize) -> bool {
        (self.lo..self.hi).contains(&(x as i64))
    }

    /// Output pixels per side touched by padding (left, right).
    pub fn sides(&self) -> (usize, usize) {
        if self.is_empty() {
            let all = self.size.div_ceil(2);
            (all, all)
        } else {
            (self.lo as usize, self.size - self.hi as usize)
        }
    }

    /// Smallest `c` such that every pixel at border distance `>= c` is clean.
    pub fn margin(&self) -> usize {
        if self.is_empty() {
            (self.size - 1) / 2 + 1
        } else {
            let (l, r) = self.sides();
            l.max(r)
        }
    }
}

#[derive(Debug, Clone)]
pub struct NetGeometry {
    nodes: Vec<LayerNode>,
    per_node: Vec<NodeGeometry>,
    output: usize,
    delta_tot: usize,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn ceil_div(a: i64, b: i64) -> i64 {
    -((-a).div_euclid(b))
}

impl NetGeometry {
    pub fn of(net: &NetworkGraph) -> Result<Self> {
        let mut per_node: Vec<NodeGeometry> = Vec::with_capacity(net.nodes.len());
        for node in &net.nodes {
            let parent = node.parents.first().map(|&p| per_node[p]);
            let g = match node.kind {
                LayerKind::Input { .. } => NodeGeometry {
                    stride: 1,
                    center2: 0,
                    receptive_field: 1,
                },
                LayerKind::Conv(c) => {
                    let p = parent.unwrap();
                    NodeGeometry {
                        stride: p.stride * c.s,
                        center2: p.center2 + p.stride as i64 * (c.d as i64 * (c.k as i64 - 1) - 2 * c.p as i64),
                        receptive_field: p.receptive_field + c.d * (c.k - 1) * p.stride,
                    }
                }
                LayerKind::MaxPool { k, s } => {
                    let p = parent.unwrap();
                    NodeGeometry {
                        stride: p.stride * s,
                        center2: p.center2 + p.stride as i64 * (k as i64 - 1),
                        receptive_field: p.receptive_field + (k - 1) * p.stride,
                    }
                }
                LayerKind::Upsample { f } => {
                    let p = parent.unwrap();
                    if p.stride % f != 0 {
                        return Err(Error::geometry(format!(
                            "upsample '{}' divides cumulative stride {} by {f}, which is not an integer",
                            node.name, p.stride
                        )));
                    }
                    let stride = p.stride / f;
                    NodeGeometry {
                        stride,
                        center2: p.center2 - (p.stride - stride) as i64,
                        receptive_field: p.receptive_field,
                    }
                }
                LayerKind::Relu | LayerKind::Output => parent.unwrap(),
                LayerKind::CropConcat => {
                    let a = per_node[node.parents[0]];
                    let b = per_node[node.parents[1]];
                    NodeGeometry {
                        receptive_field: a.receptive_field.max(b.receptive_field),
                        ..b
                    }
                }
            };
            per_node.push(g);
        }
        let delta_tot = per_node.iter().fold(1, |acc, g| acc / gcd(acc, g.stride) * g.stride);
        Ok(NetGeometry {
            nodes: net.nodes.clone(),
            per_node,
            output: net.output,
            delta_tot,
        })
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> NodeGeometry {
        self.per_node[i]
    }

    /// Equivariance period: the input shift granularity at which every
    /// node's grid moves by a whole number of its own pixels.
    pub fn delta_tot(&self) -> usize {
        self.delta_tot
    }

    pub fn output_stride(&self) -> usize {
        self.per_node[self.output].stride
    }

    pub fn output_center2(&self) -> i64 {
        self.per_node[self.output].center2
    }

    /// Input pixels trimmed on the leading side before output pixel 0.
    pub fn margin_in(&self) -> usize {
        (self.output_center2().max(0) / 2) as usize
    }

    pub fn receptive_field(&self) -> usize {
        self.per_node[self.output].receptive_field
    }

    /// The output can be pasted back into input coordinates pixel for pixel.
    pub fn check_tileable(&self) -> Result<()> {
        let c2 = self.output_center2();
        if self.output_stride() != 1 {
            return Err(Error::geometry(format!(
                "output grid has stride {}; stitching needs an input-resolution output",
                self.output_stride()
            )));
        }
        if c2 < 0 || c2 % 2 != 0 {
            return Err(Error::geometry(format!(
                "output pixel 0 is centred at input coordinate {}; stitching needs a non-negative whole margin",
                c2 as f64 / 2.0
            )));
        }
        Ok(())
    }

    /// Spatial size of every node for input size `n`.
    pub fn node_sizes(&self, n: usize) -> Result<Vec<usize>> {
        let mut sizes: Vec<usize> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let parent = node.parents.first().map(|&p| sizes[p]).unwrap_or(n);
            let too_small = || {
                Error::geometry(format!(
                    "input size {n} too small: node '{}' receives {parent} pixels and would produce none",
                    node.name
                ))
            };
            let size = match node.kind {
                LayerKind::Input { .. } => n,
                LayerKind::Conv(c) => {
                    let span = c.d * (c.k - 1) + 1;
                    let padded = parent + 2 * c.p;
                    if padded < span {
                        return Err(too_small());
                    }
                    (padded - span) / c.s + 1
                }
                LayerKind::MaxPool { k, s } => {
                    if parent < k {
                        return Err(too_small());
                    }
                    (parent - k) / s + 1
                }
                LayerKind::Upsample { f } => parent * f,
                LayerKind::Relu | LayerKind::Output => parent,
                LayerKind::CropConcat => {
                    let (a, b) = (sizes[node.parents[0]], sizes[node.parents[1]]);
                    if a < b || (a - b) % 2 != 0 {
                        return Err(Error::geometry(format!(
                            "cropconcat '{}' cannot centre-crop {a} pixels to {b} at input size {n}",
                            node.name
                        )));
                    }
                    b
                }
            };
            sizes.push(size);
        }
        Ok(sizes)
    }

    pub fn output_size(&self, n: usize) -> Result<usize> {
        Ok(self.node_sizes(n)?[self.output])
    }

    /// Reasons why input size `n` is not exact: a strided layer leaves
    /// pixels unused, or a crop misaligns its two parents' grids.
    pub fn inexact_reasons(&self, n: usize) -> Result<Vec<String>> {
        let sizes = self.node_sizes(n)?;
        let mut reasons = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let parent = node.parents.first().map(|&p| sizes[p]).unwrap_or(n);
            match node.kind {
                LayerKind::Conv(c) => {
                    let rem = (parent + 2 * c.p - (c.d * (c.k - 1) + 1)) % c.s;
                    if rem != 0 {
                        reasons.push(format!("conv '{}' leaves {rem} trailing pixels", node.name));
                    }
                }
                LayerKind::MaxPool { k, s } => {
                    let rem = (parent - k) % s;
                    if rem != 0 {
                        reasons.push(format!("maxpool '{}' leaves {rem} trailing pixels", node.name));
                    }
                }
                LayerKind::CropConcat => {
                    let (pa, pb) = (node.parents[0], node.parents[1]);
                    let crop = ((sizes[pa] - sizes[i]) / 2) as i64;
                    let a = self.per_node[pa];
                    let b = self.per_node[pb];
                    if a.center2 + 2 * crop * a.stride as i64 != b.center2 {
                        reasons.push(format!("cropconcat '{}' misaligns its parents", node.name));
                    }
                }
                _ => {}
            }
        }
        Ok(reasons)
    }

    /// Every strided layer consumes its input exactly and every crop is aligned.
    pub fn is_exact(&self, n: usize) -> bool {
        matches!(self.inexact_reasons(n), Ok(r) if r.is_empty())
    }

    /// Smallest exact input size `>= n`.
    pub fn next_exact_size(&self, n: usize) -> Option<usize> {
        let limit = n + 4 * self.delta_tot.max(1) * (self.nodes.len() + 1) + 64;
        (n.max(1)..=limit).find(|&m| self.is_exact(m))
    }

    /// Output coordinates whose computation never reads a zero-padded tap.
    pub fn clean_interval(&self, n: usize) -> Result<CleanInterval> {
        let sizes = self.node_sizes(n)?;
        let mut iv: Vec<(i64, i64)> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let size = sizes[i] as i64;
            let parent = node.parents.first().map(|&p| iv[p]);
            let (lo, hi) = match node.kind {
                LayerKind::Input { .. } => (0, size),
                LayerKind::Conv(c) => {
                    let (plo, phi) = parent.unwrap();
                    let (s, p, reach) = (c.s as i64, c.p as i64, (c.d * (c.k - 1)) as i64);
                    (ceil_div(plo + p, s), (phi - 1 + p - reach).div_euclid(s) + 1)
                }
                LayerKind::MaxPool { k, s } => {
                    let (plo, phi) = parent.unwrap();
                    let (s, reach) = (s as i64, k as i64 - 1);
                    (ceil_div(plo, s), (phi - 1 - reach).div_euclid(s) + 1)
                }
                LayerKind::Upsample { f } => {
                    let (plo, phi) = parent.unwrap();
                    (plo * f as i64, phi * f as i64)
                }
                LayerKind::Relu | LayerKind::Output => parent.unwrap(),
                LayerKind::CropConcat => {
                    let (pa, pb) = (node.parents[0], node.parents[1]);
                    let crop = ((sizes[pa] - sizes[i]) / 2) as i64;
                    let (alo, ahi) = iv[pa];
                    let (blo, bhi) = iv[pb];
                    ((alo - crop).max(blo), (ahi - crop).min(bhi))
                }
            };
            let lo = lo.clamp(0, size);
            let hi = hi.clamp(0, size);
            iv.push((lo, hi.max(lo)));
        }
        let (lo, hi) = iv[self.output];
        Ok(CleanInterval {
            lo,
            hi,
            size: sizes[self.output],
        })
    }

    /// Per-side output margin touched by zero padding for an `n`-pixel input.
    pub fn contamination_margin(&self, n: usize) -> Result<usize> {
        Ok(self.clean_interval(n)?.margin())
    }

    pub fn contamination_margin_2d(&self, w: usize, h: usize) -> Result<usize> {
        Ok(self.contamination_margin(w)?.max(self.contamination_margin(h)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(text: &str) -> NetGeometry {
        NetworkGraph::parse(text).unwrap().geometry().unwrap()
    }

    fn pools(n: usize) -> String {
        let mut s = String::from("input in channels=1\n");
        let mut prev = "in".to_string();
        for i in 0..n {
            s += &format!("maxpool p{i} from={prev} k=2 s=2\n");
            prev = format!("p{i}");
        }
        s += &format!("output out from={prev}\n");
        s
    }

    #[test]
    fn period_is_product_of_pool_strides() {
        assert_eq!(geom(&pools(4)).delta_tot(), 16);
        assert_eq!(geom(&pools(3)).delta_tot(), 8);
        assert_eq!(geom(&pools(0)).delta_tot(), 1);
    }

    #[test]
    fn conv_only_net_has_unit_period_and_summed_margin() {
        let g = geom(
            "input in channels=1\nconv a from=in k=3 cout=2\nconv b from=a k=5 d=2 cout=2\nconv c from=b k=1 cout=1\noutput o from=c\n",
        );
        assert_eq!(g.delta_tot(), 1);
        assert_eq!(g.margin_in(), 1 + 4);
        assert_eq!(g.output_size(20).unwrap(), 20 - 2 - 8);
        assert_eq!(g.receptive_field(), 1 + 2 + 8);
        assert_eq!(g.contamination_margin(20).unwrap(), 0);
    }

    #[test]
    fn identity_net() {
        let g = geom("input in channels=1\noutput o from=in\n");
        assert_eq!((g.delta_tot(), g.margin_in()), (1, 0));
        assert_eq!(g.output_size(7).unwrap(), 7);
        assert_eq!(g.contamination_margin(7).unwrap(), 0);
    }

    #[test]
    fn two_padded_convs_leave_only_the_centre_clean() {
        let g =
            geom("input in channels=1\nconv a from=in k=3 p=1 cout=1\nconv b from=a k=3 p=1 cout=1\noutput o from=b\n");
        let iv = g.clean_interval(5).unwrap();
        assert_eq!((iv.lo, iv.hi, iv.size), (2, 3, 5));
        assert_eq!(g.contamination_margin(5).unwrap(), 2);
    }

    #[test]
    fn single_padded_conv_margin_is_one() {
        let g = geom("input in channels=1\nconv a from=in k=3 p=1 cout=1\noutput o from=a\n");
        assert_eq!(g.contamination_margin(9).unwrap(), 1);
        assert_eq!(g.margin_in(), 0);
    }

    #[test]
    fn fully_contaminated_output() {
        let g = geom("input in channels=1\nconv a from=in k=5 p=2 cout=1\noutput o from=a\n");
        let iv = g.clean_interval(3).unwrap();
        assert!(iv.is_empty());
        assert_eq!(iv.margin(), 2);
    }

    #[test]
    fn upsample_must_divide_stride() {
        let net = NetworkGraph::parse("input in channels=1\nupsample u from=in f=2\noutput o from=u\n").unwrap();
        assert!(matches!(net.geometry(), Err(Error::Geometry(_))));
    }

    #[test]
    fn underflow_names_the_node() {
        let g = geom("input in channels=1\nconv a from=in k=3 cout=1\nconv b from=a k=3 cout=1\noutput o from=b\n");
        match g.output_size(4) {
            Err(Error::Geometry(msg)) => assert!(msg.contains("'b'"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pooling_exactness() {
        let g = geom(&pools(2));
        assert!(g.is_exact(8));
        assert!(!g.is_exact(10));
        assert_eq!(g.next_exact_size(9), Some(12));
        assert_eq!(g.output_stride(), 4);
        // pixel 0 of a 2x2/2 pool over a 2x2/2 pool covers inputs 0..4, centre 1.5
        assert_eq!(g.output_center2(), 3);
        assert!(g.check_tileable().is_err());
    }
}

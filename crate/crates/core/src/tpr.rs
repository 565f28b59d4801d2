//! Tensor product representations of flat filler/role structures.
//!
//! A structure is a set of bindings `filler/role`; its representation is the
//! sum of outer products `filler * role^T`. Unbinding multiplies the
//! representation by the role's dual (unbinding) vector, recovering the
//! filler exactly when the roles are linearly independent.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{mismatch, Error, Result};
use crate::tensor::{invert_or_pinv, outer_product, Mat, Vector};

/// Role vectors together with their duals.
#[derive(Clone, Debug)]
pub struct RoleBasis {
    roles: Vec<Vector>,
    duals: Vec<Vector>,
    exact: bool,
    /// `max_ij |r_i . u_j - delta_ij|`
    residual: f64,
    condition: f64,
}

impl RoleBasis {
    pub fn roles(&self) -> &[Vector] {
        &self.roles
    }

    pub fn duals(&self) -> &[Vector] {
        &self.duals
    }

    /// True when `r_i . u_j = delta_ij` holds (roles independent and well conditioned).
    pub fn is_exact(&self) -> bool {
        self.exact
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn role_dim(&self) -> usize {
        self.roles[0].len()
    }
}

/// Build the duals of `roles`: the rows of `R^-1` (or `R^+`) where the
/// columns of `R` are the role vectors.
pub fn make_role_basis(roles: Vec<Vector>) -> Result<RoleBasis> {
    let r = Mat::from_columns(&roles)?;
    let inv = invert_or_pinv(&r);
    let duals: Vec<Vector> = (0..roles.len())
        .map(|i| Vector::from_raw(inv.matrix.row(i).to_vec()))
        .collect();

    let mut residual: f64 = 0.0;
    for (i, role) in roles.iter().enumerate() {
        for (j, dual) in duals.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            residual = residual.max((role.dot(dual) - target).abs());
        }
    }
    let exact = inv.rank == roles.len() && inv.condition < crate::tensor::CONDITION_THRESHOLD;
    Ok(RoleBasis {
        roles,
        duals,
        exact,
        residual,
        condition: inv.condition,
    })
}

/// `n` orthonormal role vectors of dimension `dim` (Gram-Schmidt on Gaussian draws).
pub fn random_orthonormal_roles<R: Rng + ?Sized>(
    n: usize,
    dim: usize,
    rng: &mut R,
) -> Result<Vec<Vector>> {
    if n == 0 || n > dim {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {n} orthonormal vectors in dimension {dim}"
        )));
    }
    let mut out: Vec<Vector> = Vec::with_capacity(n);
    while out.len() < n {
        let mut v = Vector::from_raw((0..dim).map(|_| rng.sample(StandardNormal)).collect());
        // two passes of modified Gram-Schmidt keep the basis orthogonal to ~1e-16
        for _ in 0..2 {
            for q in &out {
                v = v.sub(&q.scale(v.dot(q)));
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            out.push(v.scale(1.0 / norm));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Binding {
    pub filler: Vector,
    pub role_index: usize,
}

impl Binding {
    pub fn new(filler: Vector, role_index: usize) -> Self {
        Self { filler, role_index }
    }
}

/// An order-2 TPR: a `filler_dim x role_dim` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Tpr {
    matrix: Mat,
}

impl Tpr {
    pub fn from_matrix(matrix: Mat) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub fn filler_dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn role_dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn add(&self, other: &Tpr) -> Result<Tpr> {
        Ok(Tpr::from_matrix(self.matrix.add(&other.matrix)?))
    }
}

/// Sum of `filler * role^T` over the bindings. Roles bound more than once
/// simply superpose.
pub fn bind_and_superpose(bindings: &[Binding], basis: &RoleBasis) -> Result<Tpr> {
    let first = bindings.first().ok_or(Error::Empty("bind_and_superpose"))?;
    let filler_dim = first.filler.len();
    let mut acc = Mat::zeros(filler_dim, basis.role_dim());
    for b in bindings {
        if b.filler.len() != filler_dim {
            return Err(mismatch("bind_and_superpose", filler_dim, b.filler.len()));
        }
        let role = basis.roles.get(b.role_index).ok_or(Error::IndexOutOfRange {
            index: b.role_index,
            len: basis.len(),
        })?;
        acc = acc.add(&outer_product(&b.filler, role)?)?;
    }
    Ok(Tpr::from_matrix(acc))
}

/// Recover the filler of `role_index`: `t * u_role`.
pub fn unbind(t: &Tpr, basis: &RoleBasis, role_index: usize) -> Result<Vector> {
    if basis.role_dim() != t.role_dim() {
        return Err(mismatch("unbind", t.role_dim(), basis.role_dim()));
    }
    let dual = basis.duals.get(role_index).ok_or(Error::IndexOutOfRange {
        index: role_index,
        len: basis.len(),
    })?;
    t.matrix.matvec(dual)
}

/// Word-by-word readout: unbind each role in `role_order` in turn.
pub fn generate_sequence(t: &Tpr, basis: &RoleBasis, role_order: &[usize]) -> Result<Vec<Vector>> {
    role_order.iter().map(|&r| unbind(t, basis, r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
        Vector::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn standard_basis_is_self_dual() {
        let basis = make_role_basis(vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])]).unwrap();
        assert!(basis.is_exact());
        assert_eq!(basis.duals()[0].as_slice(), &[1.0, 0.0]);
        assert_eq!(basis.duals()[1].as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn skewed_basis_duals_by_hand() {
        // R = [[1,1],[0,1]], R^-1 = [[1,-1],[0,1]]
        let basis = make_role_basis(vec![v(&[1.0, 0.0]), v(&[1.0, 1.0])]).unwrap();
        assert!(basis.is_exact());
        assert!(basis.duals()[0].max_abs_diff(&v(&[1.0, -1.0])) < 1e-14);
        assert!(basis.duals()[1].max_abs_diff(&v(&[0.0, 1.0])) < 1e-14);
        assert!(basis.residual() < 1e-14);
    }

    #[test]
    fn dependent_roles_are_approximate() {
        // R = [[1,2],[0,0]]; R+ = [[0.2,0],[0.4,0]]; R+ R = [[0.2,0.4],[0.4,0.8]].
        let basis = make_role_basis(vec![v(&[1.0, 0.0]), v(&[2.0, 0.0])]).unwrap();
        assert!(!basis.is_exact());
        assert!(basis.duals()[0].max_abs_diff(&v(&[0.2, 0.0])) < 1e-14);
        assert!(basis.duals()[1].max_abs_diff(&v(&[0.4, 0.0])) < 1e-14);
        assert!((basis.residual() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn dependent_roles_unbind_within_residual_bound() {
        let basis = make_role_basis(vec![v(&[1.0, 0.0]), v(&[2.0, 0.0])]).unwrap();
        let j = v(&[3.0, -1.0, 2.0]);
        let k = v(&[0.5, 4.0, -2.0]);
        let t = bind_and_superpose(
            &[Binding::new(j.clone(), 0), Binding::new(k.clone(), 1)],
            &basis,
        )
        .unwrap();
        // Least-squares readout by hand: t = (J + 2K) e1^T, u_0 = (0.2, 0).
        let expected = j.add(&k.scale(2.0)).scale(0.2);
        let got = unbind(&t, &basis, 0).unwrap();
        assert!(got.max_abs_diff(&expected) < 1e-12);
        let bound = basis.residual() * (j.as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs()))
            + k.as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs())));
        assert!(got.max_abs_diff(&j) <= bound + 1e-12);
    }

    #[test]
    fn single_binding_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let basis = make_role_basis(random_orthonormal_roles(3, 4, &mut rng).unwrap()).unwrap();
        let f = rand_vec(&mut rng, 5);
        let t = bind_and_superpose(&[Binding::new(f.clone(), 2)], &basis).unwrap();
        assert_eq!(t.matrix(), &outer_product(&f, &basis.roles()[2]).unwrap());
        assert!(unbind(&t, &basis, 2).unwrap().max_abs_diff(&f) < 1e-12);
    }

    #[test]
    fn binding_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let basis = make_role_basis(random_orthonormal_roles(3, 3, &mut rng).unwrap()).unwrap();
        let bs: Vec<Binding> = (0..3).map(|i| Binding::new(rand_vec(&mut rng, 4), i)).collect();
        let mut rev = bs.clone();
        rev.reverse();
        let a = bind_and_superpose(&bs, &basis).unwrap();
        let b = bind_and_superpose(&rev, &basis).unwrap();
        assert!(a.matrix().max_abs_diff(b.matrix()) < 1e-15);
    }

    #[test]
    fn repeated_role_superposes() {
        let basis = make_role_basis(vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])]).unwrap();
        let t = bind_and_superpose(
            &[Binding::new(v(&[1.0, 2.0]), 0), Binding::new(v(&[3.0, 5.0]), 0)],
            &basis,
        )
        .unwrap();
        assert_eq!(unbind(&t, &basis, 0).unwrap().as_slice(), &[4.0, 7.0]);
    }

    #[test]
    fn errors() {
        let basis = make_role_basis(vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])]).unwrap();
        assert!(matches!(
            bind_and_superpose(&[Binding::new(v(&[1.0]), 2)], &basis),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
        assert!(bind_and_superpose(
            &[Binding::new(v(&[1.0]), 0), Binding::new(v(&[1.0, 2.0]), 1)],
            &basis
        )
        .is_err());
        let t = bind_and_superpose(&[Binding::new(v(&[1.0]), 0)], &basis).unwrap();
        assert!(unbind(&t, &basis, 5).is_err());
        assert!(make_role_basis(vec![v(&[1.0, 0.0]), v(&[1.0])]).is_err());
    }

    #[test]
    fn generate_sequence_matches_per_role_unbind() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let basis = make_role_basis(random_orthonormal_roles(5, 6, &mut rng).unwrap()).unwrap();
        let fillers: Vec<Vector> = (0..5).map(|_| rand_vec(&mut rng, 3)).collect();
        let bs: Vec<Binding> = fillers
            .iter()
            .enumerate()
            .map(|(i, f)| Binding::new(f.clone(), i))
            .collect();
        let t = bind_and_superpose(&bs, &basis).unwrap();
        let order = [3, 0, 4, 1, 2];
        let seq = generate_sequence(&t, &basis, &order).unwrap();
        for (out, &r) in seq.iter().zip(&order) {
            let direct = t.matrix().matvec(&basis.duals()[r]).unwrap();
            assert_eq!(out, &direct);
            assert!(out.max_abs_diff(&fillers[r]) < 1e-10);
        }
        assert!(generate_sequence(&t, &basis, &[]).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn swapping_fillers_changes_the_tpr(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let basis = make_role_basis(random_orthonormal_roles(2, 3, &mut rng).unwrap()).unwrap();
            let j = rand_vec(&mut rng, 3);
            let k = rand_vec(&mut rng, 3);
            prop_assume!(j.max_abs_diff(&k) > 1e-6);
            let a = bind_and_superpose(&[Binding::new(j.clone(), 0), Binding::new(k.clone(), 1)], &basis).unwrap();
            let b = bind_and_superpose(&[Binding::new(j, 1), Binding::new(k, 0)], &basis).unwrap();
            prop_assert!(a.matrix().max_abs_diff(b.matrix()) > 1e-12);
        }

        #[test]
        fn union_of_disjoint_bindings_is_sum(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let basis = make_role_basis(random_orthonormal_roles(4, 4, &mut rng).unwrap()).unwrap();
            let bs: Vec<Binding> = (0..4).map(|i| Binding::new(rand_vec(&mut rng, 2), i)).collect();
            let whole = bind_and_superpose(&bs, &basis).unwrap();
            let left = bind_and_superpose(&bs[..2], &basis).unwrap();
            let right = bind_and_superpose(&bs[2..], &basis).unwrap();
            prop_assert!(whole.matrix().max_abs_diff(left.add(&right).unwrap().matrix()) < 1e-14);
        }

        #[test]
        fn independent_roles_round_trip(seed in 0u64..500, n in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // well-conditioned non-orthogonal roles: identity plus a small perturbation
            let roles: Vec<Vector> = (0..n)
                .map(|i| Vector::new((0..n).map(|j| if i == j { 1.0 } else { 0.0 } + rng.random_range(-0.3..0.3)).collect()).unwrap())
                .collect();
            let basis = make_role_basis(roles).unwrap();
            prop_assert!(basis.is_exact());
            let bs: Vec<Binding> = (0..n).map(|i| Binding::new(rand_vec(&mut rng, 4), i)).collect();
            let t = bind_and_superpose(&bs, &basis).unwrap();
            for b in &bs {
                prop_assert!(unbind(&t, &basis, b.role_index).unwrap().max_abs_diff(&b.filler) < 1e-8);
            }
        }
    }
}

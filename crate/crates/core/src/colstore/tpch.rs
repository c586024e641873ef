//! Generator for a denormalized lineitem ⋈ orders ⋈ customer ⋈ nation table
//! with TPC-H-like value domains. Every value is a pure function of
//! (seed, order number, line number, attribute), so columns can be produced
//! independently of each other.

use crate::codecs::{DataType, Values};

use super::{split_values, Column, Field, Table};

const SHIP_INSTRUCT: [&str; 4] = ["DELIVER IN PERSON", "COLLECT COD", "NONE", "TAKE BACK RETURN"];
const SHIP_MODE: [&str; 7] = ["REG AIR", "AIR", "RAIL", "SHIP", "TRUCK", "MAIL", "FOB"];
const PRIORITY: [&str; 5] = ["1-URGENT", "2-HIGH", "3-MEDIUM", "4-NOT SPECIFIED", "5-LOW"];
const SEGMENT: [&str; 5] = ["AUTOMOBILE", "BUILDING", "FURNITURE", "MACHINERY", "HOUSEHOLD"];
const NATION: [&str; 25] = [
    "ALGERIA", "ARGENTINA", "BRAZIL", "CANADA", "EGYPT", "ETHIOPIA", "FRANCE", "GERMANY", "INDIA",
    "INDONESIA", "IRAN", "IRAQ", "JAPAN", "JORDAN", "KENYA", "MOROCCO", "PERU", "CHINA", "ROMANIA",
    "SAUDI ARABIA", "VIETNAM", "RUSSIA", "UNITED KINGDOM", "UNITED STATES", "MOZAMBIQUE",
];
const WORDS: [&str; 24] = [
    "furiously", "quickly", "carefully", "blithely", "slyly", "regular", "express", "final",
    "pending", "ironic", "bold", "even", "special", "unusual", "deposits", "requests", "packages",
    "accounts", "theodolites", "instructions", "foxes", "pinto", "beans", "asymptotes",
];

/// Day numbers (days since 1970-01-01) bracketing TPC-H order dates.
const START_DATE: i64 = 8035;
const END_ORDER_DATE: i64 = 10_440;
const CURRENT_DATE: i64 = 9298;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attribute {
    OrderKey,
    PartKey,
    SuppKey,
    LineNumber,
    Quantity,
    ExtendedPrice,
    Discount,
    Tax,
    ShipDate,
    CommitDate,
    ReceiptDate,
    CustKey,
    TotalPrice,
    OrderDate,
    ShipPriority,
    NationKey,
    AcctBal,
    ReturnFlag,
    LineStatus,
    ShipInstruct,
    ShipMode,
    Comment,
    OrderPriority,
    Clerk,
    MktSegment,
    NationName,
}

impl Attribute {
    pub const ALL: [Attribute; 26] = [
        Attribute::OrderKey,
        Attribute::PartKey,
        Attribute::SuppKey,
        Attribute::LineNumber,
        Attribute::Quantity,
        Attribute::ExtendedPrice,
        Attribute::Discount,
        Attribute::Tax,
        Attribute::ShipDate,
        Attribute::CommitDate,
        Attribute::ReceiptDate,
        Attribute::CustKey,
        Attribute::TotalPrice,
        Attribute::OrderDate,
        Attribute::ShipPriority,
        Attribute::NationKey,
        Attribute::AcctBal,
        Attribute::ReturnFlag,
        Attribute::LineStatus,
        Attribute::ShipInstruct,
        Attribute::ShipMode,
        Attribute::Comment,
        Attribute::OrderPriority,
        Attribute::Clerk,
        Attribute::MktSegment,
        Attribute::NationName,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::OrderKey => "l_orderkey",
            Attribute::PartKey => "l_partkey",
            Attribute::SuppKey => "l_suppkey",
            Attribute::LineNumber => "l_linenumber",
            Attribute::Quantity => "l_quantity",
            Attribute::ExtendedPrice => "l_extendedprice",
            Attribute::Discount => "l_discount",
            Attribute::Tax => "l_tax",
            Attribute::ShipDate => "l_shipdate",
            Attribute::CommitDate => "l_commitdate",
            Attribute::ReceiptDate => "l_receiptdate",
            Attribute::CustKey => "o_custkey",
            Attribute::TotalPrice => "o_totalprice",
            Attribute::OrderDate => "o_orderdate",
            Attribute::ShipPriority => "o_shippriority",
            Attribute::NationKey => "c_nationkey",
            Attribute::AcctBal => "c_acctbal",
            Attribute::ReturnFlag => "l_returnflag",
            Attribute::LineStatus => "l_linestatus",
            Attribute::ShipInstruct => "l_shipinstruct",
            Attribute::ShipMode => "l_shipmode",
            Attribute::Comment => "l_comment",
            Attribute::OrderPriority => "o_orderpriority",
            Attribute::Clerk => "o_clerk",
            Attribute::MktSegment => "c_mktsegment",
            Attribute::NationName => "n_name",
        }
    }

    pub fn dtype(self) -> DataType {
        match self {
            Attribute::ReturnFlag
            | Attribute::LineStatus
            | Attribute::ShipInstruct
            | Attribute::ShipMode
            | Attribute::Comment
            | Attribute::OrderPriority
            | Attribute::Clerk
            | Attribute::MktSegment
            | Attribute::NationName => DataType::String,
            _ => DataType::Int64,
        }
    }

    fn salt(self) -> u64 {
        self as u64 + 1
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy)]
pub struct TpchLike {
    pub rows: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
struct Order {
    key: i64,
    lines: u32,
    custkey: i64,
    orderdate: i64,
    seed: u64,
}

impl TpchLike {
    pub fn new(rows: usize, seed: u64) -> Self {
        Self { rows, seed }
    }

    pub fn schema() -> Vec<Field> {
        Attribute::ALL
            .iter()
            .map(|a| Field::new(a.name(), a.dtype()))
            .collect()
    }

    fn draw(&self, key: u64, salt: u64, lo: i64, hi: i64) -> i64 {
        let h = mix(mix(self.seed ^ key.wrapping_mul(0x2545_F491_4F6C_DD1D)) ^ salt);
        lo + (h % (hi - lo + 1) as u64) as i64
    }

    fn order(&self, n: u64) -> Order {
        let seed = mix(self.seed.wrapping_add(n));
        let custkey = self.draw(seed, 101, 1, 150_000);
        Order {
            // sparse keys: 8 used out of every 32
            key: ((n / 8) * 32 + n % 8 + 1) as i64,
            lines: self.draw(seed, 100, 1, 7) as u32,
            custkey,
            orderdate: self.draw(seed, 102, START_DATE, END_ORDER_DATE),
            seed,
        }
    }

    fn line_key(order: &Order, line: u32) -> u64 {
        mix(order.seed ^ ((line as u64 + 1) << 56))
    }

    fn int_value(&self, attr: Attribute, o: &Order, line: u32) -> i64 {
        let lk = Self::line_key(o, line);
        let partkey = || self.draw(lk, Attribute::PartKey.salt(), 1, 200_000);
        let quantity = || self.draw(lk, Attribute::Quantity.salt(), 1, 50);
        let shipdate = || o.orderdate + self.draw(lk, Attribute::ShipDate.salt(), 1, 121);
        match attr {
            Attribute::OrderKey => o.key,
            Attribute::PartKey => partkey(),
            Attribute::SuppKey => self.draw(lk, attr.salt(), 1, 10_000),
            Attribute::LineNumber => line as i64 + 1,
            Attribute::Quantity => quantity(),
            Attribute::ExtendedPrice => {
                let p = partkey();
                let retail = 90_000 + (p / 10) % 20_001 + 100 * (p % 1_000);
                quantity() * retail
            }
            Attribute::Discount => self.draw(lk, attr.salt(), 0, 10),
            Attribute::Tax => self.draw(lk, attr.salt(), 0, 8),
            Attribute::ShipDate => shipdate(),
            Attribute::CommitDate => o.orderdate + self.draw(lk, attr.salt(), 30, 90),
            Attribute::ReceiptDate => shipdate() + self.draw(lk, attr.salt(), 1, 30),
            Attribute::CustKey => o.custkey,
            Attribute::TotalPrice => self.draw(o.seed, attr.salt(), 90_000, 50_000_000),
            Attribute::OrderDate => o.orderdate,
            Attribute::ShipPriority => 0,
            Attribute::NationKey => o.custkey % 25,
            Attribute::AcctBal => self.draw(o.custkey as u64, attr.salt(), -99_999, 999_999),
            _ => unreachable!("string attribute"),
        }
    }

    fn string_value(&self, attr: Attribute, o: &Order, line: u32) -> String {
        let lk = Self::line_key(o, line);
        match attr {
            Attribute::ReturnFlag => {
                let ship = o.orderdate + self.draw(lk, Attribute::ShipDate.salt(), 1, 121);
                let receipt = ship + self.draw(lk, Attribute::ReceiptDate.salt(), 1, 30);
                if receipt <= CURRENT_DATE {
                    if self.draw(lk, attr.salt(), 0, 1) == 0 { "R" } else { "A" }.to_owned()
                } else {
                    "N".to_owned()
                }
            }
            Attribute::LineStatus => {
                let ship = o.orderdate + self.draw(lk, Attribute::ShipDate.salt(), 1, 121);
                if ship > CURRENT_DATE { "O" } else { "F" }.to_owned()
            }
            Attribute::ShipInstruct => SHIP_INSTRUCT[self.draw(lk, attr.salt(), 0, 3) as usize].to_owned(),
            Attribute::ShipMode => SHIP_MODE[self.draw(lk, attr.salt(), 0, 6) as usize].to_owned(),
            Attribute::Comment => {
                let words = self.draw(lk, attr.salt(), 2, 6);
                (0..words)
                    .map(|w| WORDS[self.draw(lk ^ (w as u64) << 40, attr.salt(), 0, 23) as usize])
                    .collect::<Vec<_>>()
                    .join(" ")
            }
            Attribute::OrderPriority => PRIORITY[self.draw(o.seed, attr.salt(), 0, 4) as usize].to_owned(),
            Attribute::Clerk => format!("Clerk#{:09}", self.draw(o.seed, attr.salt(), 1, 1_000)),
            Attribute::MktSegment => SEGMENT[(o.custkey % 5) as usize].to_owned(),
            Attribute::NationName => NATION[(o.custkey % 25) as usize].to_owned(),
            _ => unreachable!("integer attribute"),
        }
    }

    /// Row-ordered (order, line) pairs covering exactly `self.rows` rows.
    fn rows_iter(&self) -> impl Iterator<Item = (Order, u32)> + '_ {
        (0u64..)
            .map(|n| self.order(n))
            .flat_map(|o| (0..o.lines).map(move |l| (o, l)))
            .take(self.rows)
    }

    pub fn column_values(&self, attr: Attribute) -> Values {
        match attr.dtype() {
            DataType::Int64 => Values::Int64(
                self.rows_iter()
                    .map(|(o, l)| Some(self.int_value(attr, &o, l)))
                    .collect(),
            ),
            DataType::String => Values::String(
                self.rows_iter()
                    .map(|(o, l)| Some(self.string_value(attr, &o, l)))
                    .collect(),
            ),
        }
    }

    pub fn column(&self, attr: Attribute, rows_per_slice: usize) -> Column {
        Column {
            name: attr.name().to_owned(),
            dtype: attr.dtype(),
            slices: split_values(self.column_values(attr), rows_per_slice),
        }
    }

    pub fn table(&self, rows_per_slice: usize) -> Table {
        Table {
            rows_per_slice,
            columns: Attribute::ALL
                .iter()
                .map(|a| self.column(*a, rows_per_slice))
                .collect(),
        }
    }
}

"""Generate a Telco-Customer-Churn-shaped CSV (same header, value sets, 7043 rows,
1869 churners). Used when the public file is not available locally."""
import csv
import sys

import numpy as np

N, CHURNERS = 7043, 1869
rng = np.random.default_rng(20240615)

YN = ["Yes", "No"]
header = ["customerID", "gender", "SeniorCitizen", "Partner", "Dependents", "tenure",
          "PhoneService", "MultipleLines", "InternetService", "OnlineSecurity", "OnlineBackup",
          "DeviceProtection", "TechSupport", "StreamingTV", "StreamingMovies", "Contract",
          "PaperlessBilling", "PaymentMethod", "MonthlyCharges", "TotalCharges", "Churn"]

rows, score = [], []
ids = set()
letters = np.array(list("ABCDEFGHIJKLMNOPQRSTUVWXYZ"))
for i in range(N):
    while True:
        cid = f"{rng.integers(0, 10000):04d}-{''.join(rng.choice(letters, 5))}"
        if cid not in ids:
            ids.add(cid)
            break
    contract = rng.choice(["Month-to-month", "One year", "Two year"], p=[0.55, 0.21, 0.24])
    if i < 11:
        tenure = 0
        contract = "Two year"
    elif contract == "Month-to-month":
        tenure = int(min(72, rng.exponential(14) + 1))
    else:
        tenure = int(rng.integers(1, 73))
    senior = int(rng.random() < 0.162)
    partner = rng.choice(YN, p=[0.483, 0.517])
    dependents = rng.choice(YN, p=[0.30, 0.70]) if partner == "Yes" else rng.choice(YN, p=[0.15, 0.85])
    phone = rng.choice(YN, p=[0.903, 0.097])
    multi = "No phone service" if phone == "No" else rng.choice(YN, p=[0.47, 0.53])
    internet = rng.choice(["DSL", "Fiber optic", "No"], p=[0.344, 0.44, 0.216])
    addons = {}
    for col, p_yes in [("OnlineSecurity", 0.37), ("OnlineBackup", 0.44), ("DeviceProtection", 0.44),
                       ("TechSupport", 0.37), ("StreamingTV", 0.49), ("StreamingMovies", 0.5)]:
        addons[col] = "No internet service" if internet == "No" else rng.choice(YN, p=[p_yes, 1 - p_yes])
    paperless = rng.choice(YN, p=[0.59, 0.41])
    payment = rng.choice(["Electronic check", "Mailed check", "Bank transfer (automatic)",
                          "Credit card (automatic)"], p=[0.336, 0.229, 0.219, 0.216])
    monthly = 20.0 if internet == "No" else (45.0 if internet == "DSL" else 70.0)
    monthly += 5.0 * (phone == "Yes") + 5.0 * (multi == "Yes")
    monthly += sum(5.0 for v in addons.values() if v == "Yes") + rng.normal(0, 2.0)
    monthly = round(float(np.clip(monthly, 18.25, 118.75)), 2)
    total = " " if tenure == 0 else f"{round(monthly * tenure * rng.uniform(0.95, 1.05), 2)}"
    s = {"Month-to-month": 1.6, "One year": -0.4, "Two year": -1.8}[contract]
    s += -0.035 * tenure + 0.8 * (internet == "Fiber optic") + 0.5 * (payment == "Electronic check")
    s += 0.4 * senior + 0.3 * (paperless == "Yes") - 0.4 * (addons["TechSupport"] == "Yes")
    s += rng.normal(0, 0.9)
    if tenure == 0:
        s = -99.0
    score.append(s)
    rows.append([cid, rng.choice(["Female", "Male"]), senior, partner, dependents, tenure, phone,
                 multi, internet, *addons.values(), contract, paperless, payment,
                 f"{monthly}", total, "No"])

for idx in np.argsort(score)[::-1][:CHURNERS]:
    rows[idx][-1] = "Yes"

w = csv.writer(sys.stdout, lineterminator="\r\n")
w.writerow(header)
w.writerows(rows)

@problemName Broken
@univariate true
@classLabel true a b
@data
0.0,?,1.0:a
